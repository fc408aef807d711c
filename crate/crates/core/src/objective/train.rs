//! Mini-batch training with early stopping on validation GAUC.

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceDataset;
use crate::diffkit::{neg_log_sigmoid, Matrix, ParamSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig, Split};
use crate::model::{ForwardPass, ModelConfig, ModelKind, ModelParams, QueryHead};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{bpr_gap_grad, distance_correlation_with_grad, DisDirection, LossWeights};
use super::pairs::{build_user_pairs, PairPlan, UserBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub dis_direction: DisDirection,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation GAUC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub neg_samples_per_pos: usize,
    /// Chance that a first-term negative is one of the user's passive
    /// negatives instead of an unobserved item.
    pub neg_mix: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.6,
            lambda2: 0.3,
            lambda3: 0.1,
            dis_direction: DisDirection::Minimize,
            learning_rate: 0.003,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            seed: 1,
            neg_samples_per_pos: 1,
            neg_mix: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.neg_samples_per_pos == 0 {
            return Err(Error::config("neg_samples_per_pos", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.neg_mix) {
            return Err(Error::config("neg_mix", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam_beta", "moment decay must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        Ok(())
    }

    /// Loss weights after dropping terms the model cannot use.
    pub fn effective_weights(&self, model: &ModelConfig) -> Result<LossWeights> {
        let mut w = self.weights();
        w.validate()?;
        if !model.uses_negative_input() {
            w = w.without_negative_term();
        }
        if !dis_applies(model) {
            w = w.without_dis_term();
        }
        Ok(w)
    }

    pub fn pair_plan(&self, model: &ModelConfig) -> Result<PairPlan> {
        Ok(PairPlan {
            neg_samples_per_pos: self.neg_samples_per_pos,
            observed_negatives: self.effective_weights(model)?.lambda2 > 0.0,
            neg_mix: self.neg_mix,
        })
    }
}

/// The disentanglement term needs at least two trainable prototypes.
pub fn dis_applies(model: &ModelConfig) -> bool {
    model.kind == ModelKind::Sine && model.n_interests >= 2 && !model.freeze_prototypes && !model.zero_prototypes
}

/// Loss components of one batch (or one epoch).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchLoss {
    pub l1: f64,
    pub l2: f64,
    pub l_dis: f64,
    pub joint: f64,
    pub n_first: usize,
    pub n_observed: usize,
}

/// Joint loss over prepared user batches. When `grads` is given, the
/// gradient of the joint loss is added to it.
pub fn batch_objective(
    batches: &[UserBatch],
    params: &ModelParams,
    model: &ModelConfig,
    weights: &LossWeights,
    direction: DisDirection,
    mut grads: Option<&mut ModelParams>,
) -> Result<BatchLoss> {
    let n_first = batches.iter().flat_map(|b| &b.pairs).filter(|p| p.kind.in_first_term()).count();
    let n_observed = batches.iter().flat_map(|b| &b.pairs).filter(|p| !p.kind.in_first_term()).count();
    let w_first = if n_first > 0 { weights.lambda1 / n_first as f64 } else { 0.0 };
    let w_observed = if n_observed > 0 { weights.lambda2 / n_observed as f64 } else { 0.0 };
    let mut sum_first = 0.0;
    let mut sum_observed = 0.0;

    let mut run_query = |ub: &UserBatch, head: &QueryHead, grads: Option<&mut ModelParams>| -> Option<Vec<f64>> {
        let mut acc = grads.is_some().then(|| head.accumulator());
        let mut grads = grads;
        for p in ub.pairs.iter().filter(|p| p.query == head.query) {
            let gap = head.score(p.positive, params) - head.score(p.negative, params);
            let (sum, w) = if p.kind.in_first_term() {
                (&mut sum_first, w_first)
            } else {
                (&mut sum_observed, w_observed)
            };
            *sum += neg_log_sigmoid(gap);
            if let (Some(g), Some(a)) = (grads.as_deref_mut(), acc.as_mut()) {
                let d = w * bpr_gap_grad(gap);
                head.accumulate(p.positive, d, params, g, a);
                head.accumulate(p.negative, -d, params, g, a);
            }
        }
        match (grads, acc) {
            (Some(g), Some(a)) => Some(head.finish(a, params, g)),
            _ => None,
        }
    };

    for ub in batches {
        if ub.pairs.is_empty() {
            continue;
        }
        let queries = ub.queries();
        if model.prefix_consistent() {
            let pass = ForwardPass::run(&ub.items, &ub.labels, params, model)?;
            let mut d_out = Matrix::zeros(pass.len(), params.dim());
            for &q in &queries {
                let head = pass.head(q, params, model);
                if let Some(d_o) = run_query(ub, &head, grads.as_deref_mut()) {
                    d_out.row_mut(q).copy_from_slice(&d_o);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                pass.backward(&d_out, params, g, model);
            }
        } else {
            for &q in &queries {
                let pass = ForwardPass::run(&ub.items[..=q], &ub.labels[..=q], params, model)?;
                let head = pass.head(q, params, model);
                if let Some(d_o) = run_query(ub, &head, grads.as_deref_mut()) {
                    let mut d_out = Matrix::zeros(q + 1, params.dim());
                    d_out.row_mut(q).copy_from_slice(&d_o);
                    if let Some(g) = grads.as_deref_mut() {
                        pass.backward(&d_out, params, g, model);
                    }
                }
            }
        }
    }

    let l1 = if n_first > 0 { sum_first / n_first as f64 } else { 0.0 };
    let l2 = if n_observed > 0 { sum_observed / n_observed as f64 } else { 0.0 };
    let l_dis = if dis_applies(model) {
        let (v, g) = distance_correlation_with_grad(&params.prototypes)?;
        if let Some(grads) = grads.as_deref_mut() {
            let s = direction.sign() * weights.lambda3;
            for (d, x) in grads.prototypes.data_mut().iter_mut().zip(g.data()) {
                *d += s * x;
            }
        }
        v
    } else {
        0.0
    };
    Ok(BatchLoss {
        l1,
        l2,
        l_dis,
        joint: weights.lambda1 * l1 + weights.lambda2 * l2 + direction.sign() * weights.lambda3 * l_dis,
        n_first,
        n_observed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub l_dis: f64,
    pub joint: f64,
    pub val_gauc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation GAUC.
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub weights: LossWeights,
}

pub fn train(
    dataset: &SequenceDataset,
    model: &ModelConfig,
    config: &TrainConfig,
    eval: &EvalConfig,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(model, dataset.n_items())?;
    train_from(params, dataset, model, config, eval)
}

/// Trains starting from `initial` instead of a fresh initialisation.
pub fn train_from(
    initial: ModelParams,
    dataset: &SequenceDataset,
    model: &ModelConfig,
    config: &TrainConfig,
    eval: &EvalConfig,
) -> Result<TrainOutcome> {
    model.validate()?;
    config.validate()?;
    initial.check(model)?;
    if dataset.sequences.is_empty() {
        return Err(Error::Contract("training dataset has no users".into()));
    }
    let weights = config.effective_weights(model)?;
    let plan = config.pair_plan(model)?;
    let adam = config.adam();
    let n_items = dataset.n_items();

    let mut params = initial;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.sequences.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum_first, mut n_first, mut sum_obs, mut n_obs) = (0.0, 0usize, 0.0, 0usize);
        let (mut sum_dis, mut n_batches) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batches = chunk
                .iter()
                .map(|&u| build_user_pairs(u, &dataset.sequences[u], model, &plan, n_items, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = params.zeros_like();
            let loss = batch_objective(&batches, &params, model, &weights, config.dis_direction, Some(&mut grads))?;
            if !loss.joint.is_finite() || grads.tensors().iter().any(|(_, m)| !m.is_finite()) {
                return Err(Error::Divergence(divergence_dump(epoch, b, &loss, &params)));
            }
            if model.freeze_prototypes {
                grads.prototypes.fill(0.0);
            }
            adam_step(&mut params, &grads, &mut state, &adam)?;
            if params.tensors().iter().any(|(_, m)| !m.is_finite()) {
                return Err(Error::Divergence(divergence_dump(epoch, b, &loss, &params)));
            }
            sum_first += loss.l1 * loss.n_first as f64;
            n_first += loss.n_first;
            sum_obs += loss.l2 * loss.n_observed as f64;
            n_obs += loss.n_observed;
            sum_dis += loss.l_dis;
            n_batches += 1;
        }
        let l1 = if n_first > 0 { sum_first / n_first as f64 } else { 0.0 };
        let l2 = if n_obs > 0 { sum_obs / n_obs as f64 } else { 0.0 };
        let l_dis = sum_dis / n_batches.max(1) as f64;
        let val_gauc = evaluate(dataset, &params, model, Split::Val, eval)?.gauc;
        let entry = EpochLog {
            epoch,
            l1,
            l2,
            l_dis,
            joint: weights.lambda1 * l1 + weights.lambda2 * l2 + config.dis_direction.sign() * weights.lambda3 * l_dis,
            val_gauc,
        };
        info!(
            "epoch {epoch}: joint {:.5} l1 {:.5} l2 {:.5} dis {:.5} val_gauc {:.5}",
            entry.joint, l1, l2, l_dis, val_gauc
        );
        log.push(entry);
        if best.as_ref().map_or(true, |(g, _, _)| val_gauc > *g) {
            best = Some((val_gauc, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                debug!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        weights,
    })
}

fn divergence_dump(epoch: usize, batch: usize, loss: &BatchLoss, params: &ModelParams) -> String {
    let mut s = format!(
        "training diverged at epoch {epoch}, batch {batch}: l1={} l2={} l_dis={} joint={}",
        loss.l1, loss.l2, loss.l_dis, loss.joint
    );
    for (name, m) in params.tensors() {
        let _ = write!(s, "; {name} max|x|={} finite={}", m.max_abs(), m.is_finite());
    }
    s
}

/// Tab-separated per-epoch training log.
pub fn format_train_log(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch\tl1\tl2\tl_dis\tjoint\tval_gauc\n");
    for e in log {
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", e.epoch, e.l1, e.l2, e.l_dis, e.joint, e.val_gauc);
    }
    s
}

pub fn write_train_log(log: &[EpochLog], path: &Path) -> Result<()> {
    std::fs::write(path, format_train_log(log)).map_err(|e| Error::io(path, e))
}
