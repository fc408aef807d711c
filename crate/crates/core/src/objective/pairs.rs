//! Training pair construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeedbackLabel, UserSequence};
use crate::error::{Error, Result};
use crate::model::{prepare_input, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Positive against a random item the user never interacted with.
    O1Random,
    /// Positive against one of the user's passive negatives.
    O2Observed,
    /// Negative drawn from a random mix of passive negatives and unobserved
    /// items, scored in the first loss term (the SASRec-N baseline).
    MixedInL1,
}

impl PairKind {
    pub fn in_first_term(self) -> bool {
        !matches!(self, PairKind::O2Observed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub user: usize,
    /// Position in the encoder input whose output predicts `positive`.
    pub query: usize,
    pub positive: usize,
    pub negative: usize,
    pub kind: PairKind,
}

/// Uniform draw from the items missing from `observed` (sorted, distinct),
/// by rejection.
pub fn sample_o1<R: Rng>(observed: &[usize], n_items: usize, rng: &mut R) -> Result<usize> {
    let seen = observed.iter().filter(|&&i| i < n_items).count();
    if seen >= n_items {
        return Err(Error::Sampling("user has observed every item".into()));
    }
    loop {
        let j = rng.gen_range(0..n_items);
        if observed.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
}

/// Passive negative closest in time to `at`; the earlier one wins a tie.
/// `negatives` is `(timestamp, item)` in chronological order.
pub fn sample_o2(at: i64, negatives: &[(i64, usize)]) -> Option<usize> {
    let mut best: Option<(i64, usize)> = None;
    for &(t, item) in negatives {
        let d = (t - at).abs();
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, item));
        }
    }
    best.map(|(_, item)| item)
}

/// Everything needed to score one user's training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBatch {
    pub user: usize,
    pub items: Vec<usize>,
    pub labels: Vec<FeedbackLabel>,
    pub pairs: Vec<TrainingPair>,
}

impl UserBatch {
    /// Distinct query positions, ascending.
    pub fn queries(&self) -> Vec<usize> {
        let mut q: Vec<usize> = self.pairs.iter().map(|p| p.query).collect();
        q.sort_unstable();
        q.dedup();
        q
    }
}

/// Which pair kinds to draw for a user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPlan {
    pub neg_samples_per_pos: usize,
    /// Draw O2 pairs (the second loss term is active).
    pub observed_negatives: bool,
    /// Probability that an L1 negative comes from the passive negatives.
    pub neg_mix: f64,
}

/// Builds the encoder input and training pairs for one user. Every
/// positive that follows at least one input event becomes a target,
/// predicted from the output at the preceding position.
pub fn build_user_pairs<R: Rng>(
    user: usize,
    seq: &UserSequence,
    model: &ModelConfig,
    plan: &PairPlan,
    n_items: usize,
    rng: &mut R,
) -> Result<UserBatch> {
    let start = seq.items.len().saturating_sub(model.max_len);
    let keep: Vec<usize> = (start..seq.items.len())
        .filter(|&i| model.uses_negative_input() || seq.labels[i].is_positive())
        .collect();
    let (items, labels) = prepare_input(&seq.items[start..], &seq.labels[start..], model);
    debug_assert_eq!(items.len(), keep.len());

    let negatives: Vec<(i64, usize)> = seq
        .negative_positions()
        .map(|i| (seq.timestamps[i], seq.items[i]))
        .collect();

    let mut pairs = Vec::new();
    for q in 0..items.len().saturating_sub(1) {
        if !labels[q + 1].is_positive() {
            continue;
        }
        let positive = items[q + 1];
        for _ in 0..plan.neg_samples_per_pos {
            let mixed = plan.neg_mix > 0.0 && !negatives.is_empty() && rng.gen::<f64>() < plan.neg_mix;
            let (negative, kind) = if mixed {
                (negatives[rng.gen_range(0..negatives.len())].1, PairKind::MixedInL1)
            } else {
                let kind = if plan.neg_mix > 0.0 {
                    PairKind::MixedInL1
                } else {
                    PairKind::O1Random
                };
                (sample_o1(&seq.observed, n_items, rng)?, kind)
            };
            pairs.push(TrainingPair {
                user,
                query: q,
                positive,
                negative,
                kind,
            });
        }
        if plan.observed_negatives {
            if let Some(negative) = sample_o2(seq.timestamps[keep[q + 1]], &negatives) {
                pairs.push(TrainingPair {
                    user,
                    query: q,
                    positive,
                    negative,
                    kind: PairKind::O2Observed,
                });
            }
        }
    }
    Ok(UserBatch {
        user,
        items,
        labels,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn o1_forced_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_o1(&[0, 1], 3, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn o1_exhausted_user_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(sample_o1(&[0, 1, 2], 3, &mut rng), Err(Error::Sampling(_))));
    }

    #[test]
    fn o1_is_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_o1(&[3, 5], 50, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn o1_is_uniform_over_unobserved() {
        let observed: Vec<usize> = (0..100).step_by(2).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = [0usize; 100];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sample_o1(&observed, 100, &mut rng).unwrap()] += 1;
        }
        assert!(observed.iter().all(|&i| counts[i] == 0));
        let expected = draws as f64 / 50.0;
        let chi2: f64 = (1..100)
            .step_by(2)
            .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        // 49 degrees of freedom; the 0.99 quantile is 74.92
        assert!(chi2 < 74.92, "chi2 = {chi2}");
    }

    #[test]
    fn o2_nearest_in_time() {
        assert_eq!(sample_o2(10, &[]), None);
        assert_eq!(sample_o2(10, &[(3, 7)]), Some(7));
        assert_eq!(sample_o2(10, &[(1, 4), (12, 5)]), Some(5));
        assert_eq!(sample_o2(10, &[(8, 4), (12, 5)]), Some(4));
    }

    fn sequence() -> UserSequence {
        use FeedbackLabel::*;
        UserSequence {
            user_id: "u".into(),
            items: vec![0, 1, 2, 3, 4],
            labels: vec![Positive, PassiveNegative, Positive, Positive, PassiveNegative],
            timestamps: vec![1, 2, 3, 4, 5],
            val_target: 5,
            val_timestamp: 6,
            test_target: 6,
            test_timestamp: 7,
            pre_test_items: vec![5],
            pre_test_labels: vec![Positive],
            pre_test_timestamps: vec![6],
            observed: vec![0, 1, 2, 3, 4, 5, 6],
        }
    }

    #[test]
    fn pairs_target_following_positives() {
        let plan = PairPlan {
            neg_samples_per_pos: 1,
            observed_negatives: true,
            neg_mix: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = build_user_pairs(0, &sequence(), &ModelConfig::default(), &plan, 20, &mut rng).unwrap();
        assert_eq!(b.items, vec![0, 1, 2, 3, 4]);
        let o1: Vec<_> = b.pairs.iter().filter(|p| p.kind == PairKind::O1Random).collect();
        assert_eq!(o1.iter().map(|p| (p.query, p.positive)).collect::<Vec<_>>(), vec![(1, 2), (2, 3)]);
        assert!(o1.iter().all(|p| p.negative >= 7));
        let o2: Vec<_> = b.pairs.iter().filter(|p| p.kind == PairKind::O2Observed).collect();
        // item 2 at t=3: negatives at t=2 and t=5 -> t=2; item 3 at t=4: t=5 is nearer
        assert_eq!(o2.iter().map(|p| p.negative).collect::<Vec<_>>(), vec![1, 4]);
        assert_eq!(b.queries(), vec![1, 2]);
    }

    #[test]
    fn positives_only_input_drops_negatives() {
        let model = ModelConfig::default().sasrec();
        let plan = PairPlan {
            neg_samples_per_pos: 1,
            observed_negatives: false,
            neg_mix: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = build_user_pairs(0, &sequence(), &model, &plan, 20, &mut rng).unwrap();
        assert_eq!(b.items, vec![0, 2, 3]);
        assert_eq!(
            b.pairs.iter().map(|p| (p.query, p.positive)).collect::<Vec<_>>(),
            vec![(0, 2), (1, 3)]
        );
    }

    #[test]
    fn full_mix_uses_passive_negatives_in_first_term() {
        let model = ModelConfig::default().sasrec();
        let plan = PairPlan {
            neg_samples_per_pos: 1,
            observed_negatives: false,
            neg_mix: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = build_user_pairs(0, &sequence(), &model, &plan, 20, &mut rng).unwrap();
        assert!(b.pairs.iter().all(|p| p.kind == PairKind::MixedInL1 && (p.negative == 1 || p.negative == 4)));
    }
}
