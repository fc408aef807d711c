//! Rank-based evaluation: AUC, GAUC and NDCG@K, plus the sampled
//! leave-one-out evaluation protocol.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::model::{score_next, ModelConfig, ModelParams};

/// Candidates scored for one user and one held-out target.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidates {
    pub user: String,
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl RankedCandidates {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() != self.scores.len() || self.scores.len() != self.labels.len() {
            return Err(Error::Contract("candidates, scores and labels differ in length".into()));
        }
        if self.labels.iter().filter(|&&l| l).count() != 1 {
            return Err(Error::Contract("exactly one relevant candidate expected".into()));
        }
        Ok(())
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("score is NaN".into()));
    }
    Ok(())
}

/// Number of (positive, negative) pairs and the rank-sum numerator
/// `Σ_pos rank − n_pos(n_pos+1)/2`, with tied groups sharing their
/// average rank.
fn rank_sum(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                pos_rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0, n_pos * n_neg)
}

/// Probability that a random positive outranks a random negative; ties
/// count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    check_scores(scores)?;
    let (num, pairs) = rank_sum(scores, labels);
    if pairs == 0.0 {
        return Err(Error::UndefinedMetric("AUC needs a positive and a negative".into()));
    }
    Ok(num / pairs)
}

/// Pair-count weighted mean of per-user AUC. Users whose AUC is
/// undefined are left out.
pub fn gauc(users: &[RankedCandidates]) -> Result<f64> {
    let mut weighted = 0.0;
    let mut total = 0.0;
    for u in users {
        let n_pos = u.labels.iter().filter(|&&l| l).count();
        let pairs = (n_pos * (u.labels.len() - n_pos)) as f64;
        if pairs == 0.0 {
            continue;
        }
        weighted += pairs * auc(&u.scores, &u.labels)?;
        total += pairs;
    }
    if total == 0.0 {
        return Err(Error::UndefinedMetric("no user has a defined AUC".into()));
    }
    Ok(weighted / total)
}

/// 1-based rank of the single relevant candidate. Equal scores are
/// ordered by candidate position, so an earlier candidate wins a tie.
pub fn rank_of_relevant(scores: &[f64], labels: &[bool]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    check_scores(scores)?;
    let mut relevant = labels.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i);
    let pos = match (relevant.next(), relevant.next()) {
        (Some(p), None) => p,
        (None, _) => return Err(Error::UndefinedMetric("no relevant candidate".into())),
        (Some(_), Some(_)) => {
            return Err(Error::Contract("more than one relevant candidate".into()))
        }
    };
    let s = scores[pos];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > s || (x == s && j < pos))
        .count();
    Ok(ahead + 1)
}

/// `1/log2(1 + rank)` when the relevant item is within the top `k`.
pub fn ndcg_at_k(scores: &[f64], labels: &[bool], k: usize) -> Result<f64> {
    let rank = rank_of_relevant(scores, labels)?;
    Ok(if rank <= k {
        1.0 / ((1 + rank) as f64).log2()
    } else {
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Sampled unobserved items per target.
    pub n_negatives: usize,
    /// Rank against every unobserved item instead of a sample.
    pub full_catalog: bool,
    pub ndcg_k: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_negatives: 99,
            full_catalog: false,
            ndcg_k: 2,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEval {
    pub user: String,
    pub auc: f64,
    pub ndcg: f64,
    pub rank: usize,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub users: usize,
    /// AUC over all (target, negative) pairs pooled across users.
    pub auc: f64,
    pub gauc: f64,
    pub ndcg: f64,
    pub ndcg_k: usize,
    pub per_user: Vec<UserEval>,
}

/// Candidate items for one user: the target first, then negatives.
pub fn candidate_set(
    dataset: &SequenceDataset,
    user_index: usize,
    split: Split,
    config: &EvalConfig,
) -> Vec<usize> {
    let seq = &dataset.sequences[user_index];
    let target = match split {
        Split::Val => seq.val_target,
        Split::Test => seq.test_target,
    };
    let unobserved: Vec<usize> = (0..dataset.n_items()).filter(|&i| !seq.has_observed(i)).collect();
    let mut out = vec![target];
    if config.full_catalog || unobserved.len() <= config.n_negatives {
        out.extend(unobserved);
    } else {
        let salt = match split {
            Split::Val => 0x5eed_0001u64,
            Split::Test => 0x5eed_0002u64,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed ^ salt ^ (user_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let mut picked: Vec<usize> = sample(&mut rng, unobserved.len(), config.n_negatives)
            .into_iter()
            .map(|i| unobserved[i])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    out
}

/// Scores every user's held-out target against its candidate set.
pub fn rank_users(
    dataset: &SequenceDataset,
    params: &ModelParams,
    model: &ModelConfig,
    split: Split,
    config: &EvalConfig,
) -> Result<Vec<RankedCandidates>> {
    let mut out = Vec::with_capacity(dataset.sequences.len());
    for (u, seq) in dataset.sequences.iter().enumerate() {
        let (items, labels) = match split {
            Split::Val => {
                let start = seq.items.len().saturating_sub(model.max_len);
                (seq.items[start..].to_vec(), seq.labels[start..].to_vec())
            }
            Split::Test => seq.test_prefix(model.max_len),
        };
        let candidates = candidate_set(dataset, u, split, config);
        let scores = score_next(&items, &labels, &candidates, params, model)?;
        let mut labels = vec![false; candidates.len()];
        labels[0] = true;
        out.push(RankedCandidates {
            user: seq.user_id.clone(),
            candidates,
            scores,
            labels,
        });
    }
    Ok(out)
}

pub fn evaluate(
    dataset: &SequenceDataset,
    params: &ModelParams,
    model: &ModelConfig,
    split: Split,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let ranked = rank_users(dataset, params, model, split, config)?;
    report_from_ranked(&ranked, split, config.ndcg_k)
}

pub fn report_from_ranked(ranked: &[RankedCandidates], split: Split, ndcg_k: usize) -> Result<EvalReport> {
    if ranked.is_empty() {
        return Err(Error::UndefinedMetric("no users to evaluate".into()));
    }
    let mut per_user = Vec::with_capacity(ranked.len());
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    for r in ranked {
        r.validate()?;
        per_user.push(UserEval {
            user: r.user.clone(),
            auc: auc(&r.scores, &r.labels)?,
            ndcg: ndcg_at_k(&r.scores, &r.labels, ndcg_k)?,
            rank: rank_of_relevant(&r.scores, &r.labels)?,
            n_candidates: r.candidates.len(),
        });
        pooled_scores.extend_from_slice(&r.scores);
        pooled_labels.extend_from_slice(&r.labels);
    }
    let ndcg = per_user.iter().map(|u| u.ndcg).sum::<f64>() / per_user.len() as f64;
    Ok(EvalReport {
        split,
        users: ranked.len(),
        auc: auc(&pooled_scores, &pooled_labels)?,
        gauc: gauc(ranked)?,
        ndcg,
        ndcg_k,
        per_user,
    })
}

/// Tab-separated report: a summary block, then optionally one row per user.
pub fn format_report(report: &EvalReport, per_user: bool) -> String {
    let mut s = String::from("# sine eval report v1\nmetric\tvalue\n");
    let split = match report.split {
        Split::Val => "val",
        Split::Test => "test",
    };
    let _ = writeln!(s, "split\t{split}");
    let _ = writeln!(s, "users\t{}", report.users);
    let _ = writeln!(s, "auc\t{}", report.auc);
    let _ = writeln!(s, "gauc\t{}", report.gauc);
    let _ = writeln!(s, "ndcg@{}\t{}", report.ndcg_k, report.ndcg);
    if per_user {
        let _ = writeln!(s, "\nuser\tauc\tndcg@{}\trank\tcandidates", report.ndcg_k);
        for u in &report.per_user {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", u.user, u.auc, u.ndcg, u.rank, u.n_candidates);
        }
    }
    s
}

pub fn write_report(report: &EvalReport, path: &Path, per_user: bool) -> Result<()> {
    std::fs::write(path, format_report(report, per_user)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(scores: Vec<f64>, labels: Vec<bool>) -> RankedCandidates {
        RankedCandidates {
            user: "u".into(),
            candidates: (0..scores.len()).collect(),
            scores,
            labels,
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3, 0.3], &[true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[3.0, 2.0, 1.0], &[false, true, false]).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(matches!(
            auc(&[1.0, 2.0], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(auc(&[], &[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn gauc_examples() {
        let one = ranked(vec![0.2, 0.9, 0.4], vec![false, true, false]);
        assert_eq!(gauc(&[one.clone()]).unwrap(), auc(&one.scores, &one.labels).unwrap());

        let good = ranked(vec![0.9, 0.1], vec![true, false]);
        let bad = ranked(vec![0.1, 0.9], vec![true, false]);
        assert_eq!(gauc(&[good, bad]).unwrap(), 0.5);

        // (AUC 1.0, 3 pairs) and (AUC 0.5, 1 pair)
        let a = ranked(vec![4.0, 1.0, 2.0, 3.0], vec![true, false, false, false]);
        let b = ranked(vec![1.0, 1.0], vec![true, false]);
        assert_eq!(gauc(&[a, b]).unwrap(), 0.875);
    }

    #[test]
    fn gauc_skips_undefined_users() {
        let ok = ranked(vec![0.9, 0.1], vec![true, false]);
        let degenerate = ranked(vec![0.5], vec![true]);
        assert_eq!(gauc(&[ok, degenerate.clone()]).unwrap(), 1.0);
        assert!(gauc(&[degenerate]).is_err());
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[0.9, 0.5, 0.1], &[true, false, false], 2).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[0.1, 0.5, 0.9], &[true, false, false], 2).unwrap(), 0.0);
        let second = ndcg_at_k(&[0.5, 0.9, 0.1], &[true, false, false], 2).unwrap();
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((second - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn ndcg_ties_follow_input_order() {
        assert_eq!(rank_of_relevant(&[1.0, 1.0], &[true, false]).unwrap(), 1);
        assert_eq!(rank_of_relevant(&[1.0, 1.0], &[false, true]).unwrap(), 2);
    }

    #[test]
    fn ndcg_without_relevant_item_is_undefined() {
        assert!(matches!(
            ndcg_at_k(&[1.0, 2.0], &[false, false], 2),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn nan_scores_are_rejected() {
        assert!(auc(&[f64::NAN, 1.0], &[true, false]).is_err());
    }

    #[test]
    fn report_formatting() {
        let r = report_from_ranked(
            &[ranked(vec![0.9, 0.1, 0.5], vec![true, false, false])],
            Split::Val,
            2,
        )
        .unwrap();
        let text = format_report(&r, true);
        assert!(text.contains("gauc\t1\n"));
        assert!(text.contains("u\t1\t1\t1\t3"));
    }
}
