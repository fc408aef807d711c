use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scoring architecture a checkpoint uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Sub-interest encoder with projection and fusion.
    Sine,
    /// Plain self-attentive baseline: positives only, `⟨o_t, e_i⟩` scoring.
    Sasrec,
}

/// How the encoder output is gated by each prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// `õ = o + σ(o ⊙ z) ⊙ o`
    Elementwise,
    /// `õ = o + σ(o · z) o`
    Scalar,
}

/// Which positive decides the active sub-interest for a query position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaReference {
    /// Last positive at or before the query position.
    Causal,
    /// Last positive of the whole input sequence.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub n_interests: usize,
    pub max_len: usize,
    /// Attention factor for keys sharing the active sub-interest;
    /// the others get `1 - beta1`.
    pub beta1: f64,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub causal_mask: bool,
    pub ablate_adaptive_fusion: bool,
    pub ablate_negative_feedback: bool,
    /// How far back a positive looks for its paired passive negative.
    pub recent_neg_window: usize,
    pub projection: Projection,
    pub beta_reference: BetaReference,
    /// Keep prototypes fixed during training.
    pub freeze_prototypes: bool,
    /// Initialise prototypes at zero instead of an orthonormal frame.
    pub zero_prototypes: bool,
    pub layer_norm_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Sine,
            dim: 50,
            n_interests: 3,
            max_len: 50,
            beta1: 0.7,
            n_heads: 1,
            n_blocks: 1,
            causal_mask: true,
            ablate_adaptive_fusion: false,
            ablate_negative_feedback: false,
            recent_neg_window: 5,
            projection: Projection::Elementwise,
            beta_reference: BetaReference::Causal,
            freeze_prototypes: false,
            zero_prototypes: false,
            layer_norm_eps: 1e-8,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    /// The in-repo SASRec baseline sharing this config's sizes.
    pub fn sasrec(&self) -> Self {
        Self {
            kind: ModelKind::Sasrec,
            n_interests: 1,
            ablate_negative_feedback: true,
            zero_prototypes: true,
            freeze_prototypes: true,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config("dim", "must be at least 2"));
        }
        if self.n_interests == 0 {
            return Err(Error::config("n_interests", "must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.beta1) {
            return Err(Error::config("beta1", "must lie in [0, 1]"));
        }
        if self.n_heads == 0 || self.dim % self.n_heads != 0 {
            return Err(Error::config("n_heads", "must divide dim"));
        }
        if self.n_blocks == 0 {
            return Err(Error::config("n_blocks", "must be at least 1"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::config("layer_norm_eps", "must be positive"));
        }
        Ok(())
    }

    pub fn beta2(&self) -> f64 {
        1.0 - self.beta1
    }

    /// Passive negatives are fed to the encoder.
    pub fn uses_negative_input(&self) -> bool {
        self.kind == ModelKind::Sine && !self.ablate_negative_feedback
    }

    /// Attention is modulated by sub-interest agreement.
    pub fn uses_beta(&self) -> bool {
        self.kind == ModelKind::Sine && !self.ablate_negative_feedback
    }

    /// The full model's per-query outputs depend on the prefix only, so
    /// one forward pass serves every prefix.
    pub fn prefix_consistent(&self) -> bool {
        self.causal_mask && (!self.uses_beta() || self.beta_reference == BetaReference::Causal)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::default().sasrec().validate().unwrap();
    }

    #[test]
    fn beta_out_of_range_names_field() {
        let cfg = ModelConfig {
            beta1: 1.2,
            ..ModelConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "beta1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = ModelConfig {
            dim: 10,
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
