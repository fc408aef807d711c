use crate::data::FeedbackLabel;
use crate::diffkit::{dot, Matrix};

use super::config::{BetaReference, ModelConfig};

/// Index of the prototype with the largest gap between the positive's and
/// the paired negative's matching score. Without a negative the plain
/// matching score is used. Ties go to the lowest index.
pub fn assign_sub_interest(pos_emb: &[f64], recent_neg_emb: Option<&[f64]>, prototypes: &Matrix) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..prototypes.rows() {
        let z = prototypes.row(k);
        let mut s = dot(pos_emb, z);
        if let Some(neg) = recent_neg_emb {
            s -= dot(neg, z);
        }
        if s > best_score {
            best_score = s;
            best = k;
        }
    }
    best
}

/// Position of the nearest passive negative strictly before `t` and at
/// most `window` positions away. `None` if `t` is not a positive.
pub fn pair_recent_negative(labels: &[FeedbackLabel], t: usize, window: usize) -> Option<usize> {
    if labels.get(t) != Some(&FeedbackLabel::Positive) {
        return None;
    }
    (t.saturating_sub(window)..t)
        .rev()
        .find(|&p| labels[p] == FeedbackLabel::PassiveNegative)
}

/// Sub-interest of every input position plus the active sub-interest each
/// query position compares against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubInterestAssignment {
    pub per_position: Vec<usize>,
    pub reference: Vec<usize>,
}

pub fn assign_sequence(
    items: &[usize],
    labels: &[FeedbackLabel],
    embeddings: &Matrix,
    prototypes: &Matrix,
    config: &ModelConfig,
) -> SubInterestAssignment {
    let per_position: Vec<usize> = (0..items.len())
        .map(|t| {
            let pos = embeddings.row(items[t]);
            let neg = pair_recent_negative(labels, t, config.recent_neg_window)
                .map(|p| embeddings.row(items[p]));
            assign_sub_interest(pos, neg, prototypes)
        })
        .collect();

    let last_positive = labels.iter().rposition(|l| l.is_positive());
    let mut reference = Vec::with_capacity(items.len());
    let mut running: Option<usize> = None;
    for t in 0..items.len() {
        if labels[t].is_positive() {
            running = Some(t);
        }
        let anchor = match config.beta_reference {
            BetaReference::Causal => running,
            BetaReference::Global => last_positive,
        };
        reference.push(per_position[anchor.unwrap_or(t)]);
    }
    SubInterestAssignment {
        per_position,
        reference,
    }
}
