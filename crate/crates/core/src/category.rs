//! Four-case category overlap between positive feedback and nearby
//! passive negatives, with a random-item baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeedbackLabel, InteractionLog};
use crate::error::{Error, Result};

/// Three-level category path, coarse to fine.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryTriple {
    pub level1: String,
    pub level2: String,
    pub level3: String,
}

impl CategoryTriple {
    pub fn new(level1: impl Into<String>, level2: impl Into<String>, level3: impl Into<String>) -> Self {
        Self {
            level1: level1.into(),
            level2: level2.into(),
            level3: level3.into(),
        }
    }
}

/// Case 1: level-1 differs. Case 2: level-1 shared, level-2 differs.
/// Case 3: levels 1–2 shared, level-3 differs. Case 4: all shared.
pub fn case_of(a: &CategoryTriple, b: &CategoryTriple) -> usize {
    if a.level1 != b.level1 {
        1
    } else if a.level2 != b.level2 {
        2
    } else if a.level3 != b.level3 {
        3
    } else {
        4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    ObservedNegative,
    RandomNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseHistogram {
    pub pair_kind: PairKind,
    pub counts: [u64; 4],
}

impl CaseHistogram {
    pub fn new(pair_kind: PairKind) -> Self {
        Self {
            pair_kind,
            counts: [0; 4],
        }
    }

    pub fn record(&mut self, case: usize) {
        self.counts[case - 1] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of pairs in `case` (1-based); 0 when empty.
    pub fn fraction(&self, case: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.counts[case - 1] as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    /// Every in-window (positive, negative) pair counts once.
    AllPairs,
    /// Only the nearest in-window negative per positive (earlier wins ties).
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Maximum position distance between the positive and the negative.
    pub window: usize,
    pub multiplicity: Multiplicity,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window: 1,
            multiplicity: Multiplicity::AllPairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAnalysis {
    pub observed: CaseHistogram,
    pub random: CaseHistogram,
    /// In-window pairs skipped because an endpoint lacked a category.
    pub skipped_pairs: u64,
}

/// Classifies in-window positive/passive-negative pairs of a labelled log.
///
/// Positions are counted over the user's non-discarded events. Each
/// positive with at least one classified pair is also compared with one
/// item drawn uniformly from the log's categorised items.
pub fn categorize_pairs<R: Rng>(
    log: &InteractionLog,
    config: &AnalysisConfig,
    rng: &mut R,
) -> Result<CategoryAnalysis> {
    if config.window == 0 {
        return Err(Error::config("window", "must be at least 1"));
    }
    if !log.is_labeled() {
        return Err(Error::Contract("categorize_pairs requires a labelled log".into()));
    }
    let log = log.without_discarded();
    let mut universe: BTreeMap<&str, &CategoryTriple> = BTreeMap::new();
    for it in log.interactions() {
        if let Some(c) = &it.category {
            universe.entry(&it.item_id).or_insert(c);
        }
    }
    let universe: Vec<&CategoryTriple> = universe.into_values().collect();

    let mut out = CategoryAnalysis {
        observed: CaseHistogram::new(PairKind::ObservedNegative),
        random: CaseHistogram::new(PairKind::RandomNegative),
        skipped_pairs: 0,
    };
    for events in log.by_user() {
        for (p, pos) in events.iter().enumerate() {
            if pos.label != Some(FeedbackLabel::Positive) {
                continue;
            }
            let lo = p.saturating_sub(config.window);
            let hi = (p + config.window).min(events.len() - 1);
            let mut negatives: Vec<usize> = (lo..=hi)
                .filter(|&q| events[q].label == Some(FeedbackLabel::PassiveNegative))
                .collect();
            if config.multiplicity == Multiplicity::Nearest {
                negatives.sort_by_key(|&q| (q.abs_diff(p), q));
                negatives.truncate(1);
            }
            let mut classified = false;
            for q in negatives {
                match (&pos.category, &events[q].category) {
                    (Some(a), Some(b)) => {
                        out.observed.record(case_of(a, b));
                        classified = true;
                    }
                    _ => out.skipped_pairs += 1,
                }
            }
            if classified && !universe.is_empty() {
                let other = universe[rng.gen_range(0..universe.len())];
                out.random.record(case_of(pos.category.as_ref().expect("classified"), other));
            }
        }
    }
    Ok(out)
}

/// Tab-separated histogram table, one row per pair kind.
pub fn histogram_table(analysis: &CategoryAnalysis) -> String {
    let mut s = String::from("pair_kind\tcase1\tcase2\tcase3\tcase4\ttotal\tfrac1\tfrac2\tfrac3\tfrac4\n");
    for (name, h) in [("observed", &analysis.observed), ("random", &analysis.random)] {
        let _ = write!(s, "{name}");
        for c in h.counts {
            let _ = write!(s, "\t{c}");
        }
        let _ = write!(s, "\t{}", h.total());
        for case in 1..=4 {
            let _ = write!(s, "\t{:.6}", h.fraction(case));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "# skipped_pairs\t{}", analysis.skipped_pairs);
    s
}

pub fn write_histograms(analysis: &CategoryAnalysis, path: &Path) -> Result<()> {
    std::fs::write(path, histogram_table(analysis)).map_err(|e| Error::io(path, e))
}
