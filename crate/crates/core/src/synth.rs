//! Synthetic interaction logs from a planted multi-aspect user model.
//!
//! Every item belongs to one dominant aspect (its level-1 category) and
//! carries `n_factors` latent factor values. The first factor refines the
//! level-2 category, the second the level-3 category; further factors are
//! hidden from the category tree. Each user is interested in a few aspects
//! and, per aspect, in one exact factor profile. A session activates one
//! aspect: items matching the profile on every factor are watched to the
//! end (positive), items that miss exactly one factor are skipped within
//! three seconds (passive negative). Rarely, an item from an unrelated
//! aspect is skipped as noise.
//!
//! Randomness comes from a single ChaCha8 stream seeded with
//! `SynthConfig::seed`, so logs are byte-identical across platforms.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::CategoryTriple;
use crate::data::{Interaction, InteractionLog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Number of planted aspects.
    pub k_true: usize,
    pub dim: usize,
    /// Positives per session.
    pub session_len: usize,
    pub sessions_per_user: usize,
    /// Per-event probability of an unrelated-aspect skip.
    pub skip_noise: f64,
    pub seed: u64,
    /// Latent factors per item; the first two shape the category tree.
    pub n_factors: usize,
    /// Values each factor can take.
    pub factor_levels: usize,
    /// Aspects each user is interested in (capped at `k_true`).
    pub interests_per_user: usize,
    /// Probability that a positive comes with a near-miss skip.
    pub near_miss_rate: f64,
    /// Probability that a near-miss skip sits right before its positive.
    pub adjacent_rate: f64,
    /// Per-session probability of one gray-zone (discarded) view.
    pub gray_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 600,
            k_true: 3,
            dim: 16,
            session_len: 4,
            sessions_per_user: 8,
            skip_noise: 0.05,
            seed: 7,
            n_factors: 3,
            factor_levels: 2,
            interests_per_user: 2,
            near_miss_rate: 0.5,
            adjacent_rate: 0.7,
            gray_rate: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 {
            return Err(Error::config("k_true", "must be at least 1"));
        }
        if self.n_items < self.k_true {
            return Err(Error::config("n_items", "must be at least k_true"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.session_len == 0 {
            return Err(Error::config("session_len", "must be at least 1"));
        }
        if self.n_factors == 0 {
            return Err(Error::config("n_factors", "must be at least 1"));
        }
        if self.factor_levels < 2 {
            return Err(Error::config("factor_levels", "must be at least 2"));
        }
        if self.interests_per_user == 0 {
            return Err(Error::config("interests_per_user", "must be at least 1"));
        }
        for (name, p) in [
            ("skip_noise", self.skip_noise),
            ("near_miss_rate", self.near_miss_rate),
            ("adjacent_rate", self.adjacent_rate),
            ("gray_rate", self.gray_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn cells_per_aspect(&self) -> usize {
        self.factor_levels.pow(self.n_factors as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTruth {
    pub item_id: String,
    pub aspect: usize,
    pub factors: Vec<usize>,
    pub category: CategoryTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    /// Aspects the user cares about.
    pub interests: Vec<usize>,
    /// Preferred factor profile for each entry of `interests`.
    pub profiles: Vec<Vec<usize>>,
    /// Active aspect of each session.
    pub schedule: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k_true: usize,
    pub aspect_vectors: Vec<Vec<f64>>,
    pub items: Vec<ItemTruth>,
    pub users: Vec<UserTruth>,
}

fn category_for(aspect: usize, factors: &[usize]) -> CategoryTriple {
    let l1 = format!("c{aspect}");
    let l2 = format!("{l1}.{}", factors[0]);
    let l3 = format!("{l2}.{}", factors.get(1).copied().unwrap_or(0));
    CategoryTriple::new(l1, l2, l3)
}

fn decode_cell(mut cell: usize, n_factors: usize, levels: usize) -> Vec<usize> {
    let mut out = vec![0; n_factors];
    for f in out.iter_mut() {
        *f = cell % levels;
        cell /= levels;
    }
    out
}

fn encode_cell(factors: &[usize], levels: usize) -> usize {
    factors.iter().rev().fold(0, |acc, &f| acc * levels + f)
}

/// Unit vectors, decorrelated by Gram–Schmidt when `k <= dim`.
fn aspect_vectors(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let gaussian = |rng: &mut ChaCha8Rng| {
        // Box–Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let normalize = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        if k <= dim {
            for u in &out {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        if v.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
            continue;
        }
        normalize(&mut v);
        out.push(v);
    }
    out
}

struct EventSpec {
    item: usize,
    kind: EventKind,
}

#[derive(Clone, Copy, PartialEq)]
enum EventKind {
    Positive,
    Skip,
    Gray,
}

pub fn generate(config: &SynthConfig) -> Result<(InteractionLog, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.k_true;
    let cells = config.cells_per_aspect();
    let levels = config.factor_levels;

    let aspect_vectors = aspect_vectors(k, config.dim, &mut rng);

    // Balanced layout: item i has aspect i % k and cycles through cells.
    let mut items = Vec::with_capacity(config.n_items);
    let mut by_cell: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); cells]; k];
    for i in 0..config.n_items {
        let aspect = i % k;
        let cell = (i / k) % cells;
        let factors = decode_cell(cell, config.n_factors, levels);
        by_cell[aspect][cell].push(i);
        items.push(ItemTruth {
            item_id: format!("i{i}"),
            aspect,
            category: category_for(aspect, &factors),
            factors,
        });
    }
    let by_aspect: Vec<Vec<usize>> = (0..k).map(|a| by_cell[a].concat()).collect();

    let n_interests = config.interests_per_user.min(k);
    let mut users = Vec::with_capacity(config.n_users);
    let mut interactions = Vec::new();
    for u in 0..config.n_users {
        let mut aspects: Vec<usize> = (0..k).collect();
        aspects.shuffle(&mut rng);
        let mut interests: Vec<usize> = aspects[..n_interests].to_vec();
        interests.sort_unstable();
        // prefer profiles whose cell is populated
        let profiles: Vec<Vec<usize>> = interests
            .iter()
            .map(|&a| {
                let filled: Vec<usize> = (0..cells).filter(|&c| !by_cell[a][c].is_empty()).collect();
                let cell = filled.choose(&mut rng).copied().unwrap_or(0);
                decode_cell(cell, config.n_factors, levels)
            })
            .collect();
        let unrelated: Vec<usize> = (0..k)
            .filter(|a| !interests.contains(a))
            .flat_map(|a| by_aspect[a].iter().copied())
            .collect();

        let mut schedule = Vec::with_capacity(config.sessions_per_user);
        let mut clock: i64 = 1_600_000_000 + rng.gen_range(0..86_400);
        for _ in 0..config.sessions_per_user {
            let slot = rng.gen_range(0..interests.len());
            let aspect = interests[slot];
            schedule.push(aspect);
            let profile = &profiles[slot];
            let hits = &by_cell[aspect][encode_cell(profile, levels)];

            let mut session: Vec<EventSpec> = Vec::new();
            let mut floating: Vec<EventSpec> = Vec::new();
            for _ in 0..config.session_len {
                let item = if hits.is_empty() {
                    by_aspect[aspect][rng.gen_range(0..by_aspect[aspect].len())]
                } else {
                    hits[rng.gen_range(0..hits.len())]
                };
                if rng.gen_bool(config.near_miss_rate) {
                    let mut missed = profile.clone();
                    let f = rng.gen_range(0..config.n_factors);
                    let shift = rng.gen_range(1..levels);
                    missed[f] = (missed[f] + shift) % levels;
                    let pool = &by_cell[aspect][encode_cell(&missed, levels)];
                    if !pool.is_empty() {
                        let skip = EventSpec {
                            item: pool[rng.gen_range(0..pool.len())],
                            kind: EventKind::Skip,
                        };
                        if rng.gen_bool(config.adjacent_rate) {
                            session.push(skip);
                        } else {
                            floating.push(skip);
                        }
                    }
                }
                session.push(EventSpec {
                    item,
                    kind: EventKind::Positive,
                });
                if !unrelated.is_empty() && rng.gen_bool(config.skip_noise) {
                    session.push(EventSpec {
                        item: unrelated[rng.gen_range(0..unrelated.len())],
                        kind: EventKind::Skip,
                    });
                }
            }
            for skip in floating {
                let at = rng.gen_range(0..=session.len());
                session.insert(at, skip);
            }
            if rng.gen_bool(config.gray_rate) {
                let pool = &by_aspect[aspect];
                let at = rng.gen_range(0..=session.len());
                session.insert(
                    at,
                    EventSpec {
                        item: pool[rng.gen_range(0..pool.len())],
                        kind: EventKind::Gray,
                    },
                );
            }

            for ev in session {
                clock += rng.gen_range(5..60);
                let video: f64 = rng.gen_range(10.0..120.0);
                let watch = match ev.kind {
                    EventKind::Positive => video * rng.gen_range(0.55..1.0),
                    EventKind::Skip => rng.gen_range(0.2..2.8),
                    EventKind::Gray => rng.gen_range(3.5..0.45 * video),
                };
                // two decimals keep the CSV compact and exact on reload
                let round = |x: f64| (x * 100.0).round() / 100.0;
                interactions.push(Interaction {
                    user_id: format!("u{u}"),
                    item_id: items[ev.item].item_id.clone(),
                    timestamp: clock,
                    watch_seconds: round(watch),
                    video_seconds: round(video),
                    category: Some(items[ev.item].category.clone()),
                    label: None,
                });
            }
            clock += rng.gen_range(3_600..86_400);
        }
        users.push(UserTruth {
            user_id: format!("u{u}"),
            interests,
            profiles,
            schedule,
        });
    }

    Ok((
        InteractionLog::new(interactions),
        GroundTruth {
            k_true: k,
            aspect_vectors,
            items,
            users,
        },
    ))
}

pub fn export_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(gt).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn import_ground_truth(path: &Path) -> Result<GroundTruth> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{label_feedback, FeedbackLabel};

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 40,
            n_items: 120,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_users_gives_empty_log() {
        let (log, gt) = generate(&SynthConfig {
            n_users: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(log.is_empty());
        assert!(gt.users.is_empty());
    }

    #[test]
    fn too_few_items_is_a_config_error() {
        let cfg = SynthConfig {
            n_items: 2,
            k_true: 3,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn bad_probability_is_rejected() {
        let cfg = SynthConfig {
            skip_noise: 1.5,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = generate(&small()).unwrap();
        let (b, _) = generate(&small()).unwrap();
        a.write_csv(&dir.path().join("a.csv")).unwrap();
        b.write_csv(&dir.path().join("b.csv")).unwrap();
        let ra = fs::read(dir.path().join("a.csv")).unwrap();
        let rb = fs::read(dir.path().join("b.csv")).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn different_seeds_differ() {
        let (a, _) = generate(&small()).unwrap();
        let (b, _) = generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn aspect_vectors_are_orthonormal() {
        let (_, gt) = generate(&small()).unwrap();
        assert_eq!(gt.aspect_vectors.len(), 3);
        for (i, a) in gt.aspect_vectors.iter().enumerate() {
            for (j, b) in gt.aspect_vectors.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn category_hierarchy_follows_aspect() {
        let (_, gt) = generate(&small()).unwrap();
        for it in &gt.items {
            assert_eq!(it.category.level1, format!("c{}", it.aspect));
            assert!(it.category.level2.starts_with(&it.category.level1));
            assert!(it.category.level3.starts_with(&it.category.level2));
        }
    }

    #[test]
    fn labels_match_planted_kinds() {
        let cfg = small();
        let (log, gt) = generate(&cfg).unwrap();
        let labeled = label_feedback(&log, 0.5, 3.0);
        let item = |id: &str| &gt.items[id[1..].parse::<usize>().unwrap()];
        for events in labeled.by_user() {
            let u = &gt.users[events[0].user_id[1..].parse::<usize>().unwrap()];
            for e in events {
                if e.label == Some(FeedbackLabel::Positive) {
                    let it = item(&e.item_id);
                    let slot = u.interests.iter().position(|&a| a == it.aspect).unwrap();
                    assert_eq!(it.factors, u.profiles[slot]);
                }
            }
        }
    }

    #[test]
    fn ground_truth_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.json");
        let (_, gt) = generate(&small()).unwrap();
        export_ground_truth(&gt, &path).unwrap();
        let back = import_ground_truth(&path).unwrap();
        assert_eq!(back, gt);
        assert_eq!(back.aspect_vectors.len(), 3);

        let (_, empty) = generate(&SynthConfig {
            n_users: 0,
            ..small()
        })
        .unwrap();
        export_ground_truth(&empty, &path).unwrap();
        assert_eq!(import_ground_truth(&path).unwrap(), empty);
    }
}
