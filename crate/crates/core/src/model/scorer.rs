use crate::data::FeedbackLabel;
use crate::diffkit::{axpy, dot, Matrix};
use crate::error::{Error, Result};

use super::assign::{assign_sequence, SubInterestAssignment};
use super::config::{ModelConfig, ModelKind};
use super::encoder::{beta_matrix, encode, encode_backward, EncoderCache};
use super::head::{fuse_backward, fuse_score, project_backward, project_sub_interests, FuseGrads, Fusion, ProjectedInterests};
use super::params::ModelParams;

/// Drops passive negatives when the configuration does not feed them to
/// the encoder.
pub fn prepare_input(items: &[usize], labels: &[FeedbackLabel], config: &ModelConfig) -> (Vec<usize>, Vec<FeedbackLabel>) {
    if config.uses_negative_input() {
        (items.to_vec(), labels.to_vec())
    } else {
        items
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.is_positive())
            .map(|(i, l)| (*i, *l))
            .unzip()
    }
}

/// One encoder pass over an already prepared input sequence.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub items: Vec<usize>,
    pub labels: Vec<FeedbackLabel>,
    pub assignment: Option<SubInterestAssignment>,
    pub encoder: EncoderCache,
}

impl ForwardPass {
    pub fn run(items: &[usize], labels: &[FeedbackLabel], params: &ModelParams, config: &ModelConfig) -> Result<Self> {
        if items.len() != labels.len() {
            return Err(Error::Contract("items and labels differ in length".into()));
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= params.n_items()) {
            return Err(Error::Vocabulary(format!("item index {bad}")));
        }
        let assignment = (config.kind == ModelKind::Sine).then(|| {
            assign_sequence(items, labels, &params.item_embeddings, &params.prototypes, config)
        });
        let beta = match (&assignment, config.uses_beta()) {
            (Some(a), true) => Some(beta_matrix(a, config)),
            _ => None,
        };
        let encoder = encode(items, beta, params, config)?;
        Ok(Self {
            items: items.to_vec(),
            labels: labels.to_vec(),
            assignment,
            encoder,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Scoring head for the prefix ending at position `q`.
    pub fn head(&self, q: usize, params: &ModelParams, config: &ModelConfig) -> QueryHead {
        let o = self.encoder.output.row(q).to_vec();
        match config.kind {
            ModelKind::Sasrec => QueryHead {
                query: q,
                o,
                proj: None,
                fusion: Fusion::Adaptive,
            },
            ModelKind::Sine => {
                let proj = project_sub_interests(&o, &params.prototypes, config.projection);
                let fusion = if config.ablate_adaptive_fusion {
                    let a = self.assignment.as_ref().expect("sine assignment");
                    Fusion::OneHot(a.reference[q])
                } else {
                    Fusion::Adaptive
                };
                QueryHead {
                    query: q,
                    o,
                    proj: Some(proj),
                    fusion,
                }
            }
        }
    }

    /// Backpropagates `∂L/∂O` (rows for every position) into `grads`.
    pub fn backward(&self, d_output: &Matrix, params: &ModelParams, grads: &mut ModelParams, config: &ModelConfig) {
        encode_backward(&self.encoder, params, d_output, grads, config);
    }
}

/// Encoder output at one position plus its projected sub-interests.
#[derive(Debug, Clone)]
pub struct QueryHead {
    pub query: usize,
    pub o: Vec<f64>,
    pub proj: Option<ProjectedInterests>,
    pub fusion: Fusion,
}

/// Per-query gradient buffer for the projected sub-interests.
#[derive(Debug, Clone)]
pub struct HeadAccumulator {
    d_subs: Matrix,
    d_o: Vec<f64>,
}

impl QueryHead {
    pub fn score(&self, item: usize, params: &ModelParams) -> f64 {
        let e = params.item_embeddings.row(item);
        match &self.proj {
            None => dot(&self.o, e),
            Some(p) => {
                fuse_score(&p.subs, e, params.fusion_w.row(0), params.fusion_b[(0, 0)], self.fusion).score
            }
        }
    }

    /// Fusion weights γ for `item`; `[1.0]` for the plain head.
    pub fn gamma(&self, item: usize, params: &ModelParams) -> Vec<f64> {
        let e = params.item_embeddings.row(item);
        match &self.proj {
            None => vec![1.0],
            Some(p) => fuse_score(&p.subs, e, params.fusion_w.row(0), params.fusion_b[(0, 0)], self.fusion).gamma,
        }
    }

    pub fn accumulator(&self) -> HeadAccumulator {
        let (k, d) = self
            .proj
            .as_ref()
            .map_or((0, self.o.len()), |p| p.subs.shape());
        HeadAccumulator {
            d_subs: Matrix::zeros(k, d),
            d_o: vec![0.0; self.o.len()],
        }
    }

    /// Adds `d_score · ∂score(item)/∂θ` to `grads` (target embedding and
    /// fusion weights) and to `acc` (sub-interests / encoder output).
    pub fn accumulate(
        &self,
        item: usize,
        d_score: f64,
        params: &ModelParams,
        grads: &mut ModelParams,
        acc: &mut HeadAccumulator,
    ) {
        let e = params.item_embeddings.row(item);
        match &self.proj {
            None => {
                axpy(&mut acc.d_o, d_score, e);
                axpy(grads.item_embeddings.row_mut(item), d_score, &self.o);
            }
            Some(p) => {
                let w = params.fusion_w.row(0);
                let fused = fuse_score(&p.subs, e, w, params.fusion_b[(0, 0)], self.fusion);
                let mut d_target = vec![0.0; e.len()];
                let mut d_b = 0.0;
                fuse_backward(
                    &p.subs,
                    e,
                    w,
                    &fused,
                    self.fusion,
                    d_score,
                    FuseGrads {
                        d_subs: &mut acc.d_subs,
                        d_target: &mut d_target,
                        d_w: grads.fusion_w.row_mut(0),
                        d_b: &mut d_b,
                    },
                );
                grads.fusion_b[(0, 0)] += d_b;
                axpy(grads.item_embeddings.row_mut(item), 1.0, &d_target);
            }
        }
    }

    /// Finishes the projection backward pass; returns `∂L/∂o`.
    pub fn finish(&self, acc: HeadAccumulator, params: &ModelParams, grads: &mut ModelParams) -> Vec<f64> {
        let mut d_o = acc.d_o;
        if let Some(p) = &self.proj {
            project_backward(&self.o, &params.prototypes, p, &acc.d_subs, &mut d_o, &mut grads.prototypes);
        }
        d_o
    }
}

/// Scores `candidates` as the next item after the given prefix.
pub fn score_next(
    items: &[usize],
    labels: &[FeedbackLabel],
    candidates: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    let (items, labels) = prepare_input(items, labels, config);
    if items.is_empty() {
        return Err(Error::Contract("prefix has no usable events".into()));
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= params.n_items()) {
        return Err(Error::Vocabulary(format!("item index {bad}")));
    }
    let pass = ForwardPass::run(&items, &labels, params, config)?;
    let head = pass.head(items.len() - 1, params, config);
    Ok(candidates.iter().map(|&c| head.score(c, params)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Projection;
    use FeedbackLabel::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            dim: 8,
            max_len: 10,
            n_interests: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn duplicate_candidates_score_equally_and_permute() {
        let c = cfg();
        let p = ModelParams::init(&c, 12).unwrap();
        let items = [1, 2, 3, 4];
        let labels = [Positive, PassiveNegative, Positive, Positive];
        let s = score_next(&items, &labels, &[5, 5, 7, 9], &p, &c).unwrap();
        assert_eq!(s[0], s[1]);
        let r = score_next(&items, &labels, &[9, 7, 5], &p, &c).unwrap();
        assert_eq!(r, vec![s[3], s[2], s[0]]);
    }

    #[test]
    fn unknown_candidate_is_a_vocabulary_error() {
        let c = cfg();
        let p = ModelParams::init(&c, 4).unwrap();
        assert!(matches!(
            score_next(&[1], &[Positive], &[99], &p, &c),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn negative_only_prefix_is_rejected_when_negatives_are_ablated() {
        let c = ModelConfig {
            ablate_negative_feedback: true,
            ..cfg()
        };
        let p = ModelParams::init(&c, 4).unwrap();
        assert!(score_next(&[1], &[PassiveNegative], &[2], &p, &c).is_err());
    }

    #[test]
    fn degenerate_sine_is_one_and_a_half_sasrec() {
        let base = ModelConfig {
            n_interests: 1,
            ablate_negative_feedback: true,
            zero_prototypes: true,
            freeze_prototypes: true,
            ..cfg()
        };
        let sas = base.sasrec();
        let p = ModelParams::init(&base, 20).unwrap();
        let items = [3, 4, 5, 6, 7];
        let labels = [Positive, PassiveNegative, Positive, PassiveNegative, Positive];
        let cands: Vec<usize> = (0..20).collect();
        let a = score_next(&items, &labels, &cands, &p, &base).unwrap();
        let b = score_next(&items, &labels, &cands, &p, &sas).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - 1.5 * y).abs() < 1e-12);
        }
        assert_eq!(base.projection, Projection::Elementwise);
    }
}
