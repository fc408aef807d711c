//! Sub-interest projection and adaptive-fusion scoring.

use crate::diffkit::{axpy, dot, logistic, Matrix};

use super::config::Projection;

/// The `K` user-specific sub-interest vectors for one encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedInterests {
    /// `K × D`, row `k` is `õ^k`.
    pub subs: Matrix,
    /// Elementwise gates (`K × D`) or scalar gates (`K × 1`).
    gates: Matrix,
    mode: Projection,
}

pub fn project_sub_interests(o: &[f64], prototypes: &Matrix, mode: Projection) -> ProjectedInterests {
    let (k, d) = prototypes.shape();
    let mut subs = Matrix::zeros(k, d);
    let gates = match mode {
        Projection::Elementwise => {
            let gates = Matrix::from_fn(k, d, |r, c| logistic(o[c] * prototypes[(r, c)]));
            for r in 0..k {
                for c in 0..d {
                    subs[(r, c)] = o[c] + gates[(r, c)] * o[c];
                }
            }
            gates
        }
        Projection::Scalar => {
            let gates = Matrix::from_fn(k, 1, |r, _| logistic(dot(o, prototypes.row(r))));
            for r in 0..k {
                let g = gates[(r, 0)];
                for c in 0..d {
                    subs[(r, c)] = o[c] * (1.0 + g);
                }
            }
            gates
        }
    };
    ProjectedInterests { subs, gates, mode }
}

/// Accumulates `∂L/∂o` and `∂L/∂Z` from `∂L/∂õ`.
pub fn project_backward(
    o: &[f64],
    prototypes: &Matrix,
    proj: &ProjectedInterests,
    d_subs: &Matrix,
    d_o: &mut [f64],
    d_prototypes: &mut Matrix,
) {
    let (k, d) = prototypes.shape();
    match proj.mode {
        Projection::Elementwise => {
            for r in 0..k {
                for c in 0..d {
                    let g = proj.gates[(r, c)];
                    let ds = d_subs[(r, c)];
                    let slope = g * (1.0 - g);
                    d_o[c] += ds * (1.0 + g + o[c] * prototypes[(r, c)] * slope);
                    d_prototypes[(r, c)] += ds * o[c] * o[c] * slope;
                }
            }
        }
        Projection::Scalar => {
            for r in 0..k {
                let g = proj.gates[(r, 0)];
                let slope = g * (1.0 - g);
                let ds = d_subs.row(r);
                let inner = dot(ds, o);
                for c in 0..d {
                    d_o[c] += ds[c] * (1.0 + g) + inner * slope * prototypes[(r, c)];
                }
                axpy(d_prototypes.row_mut(r), inner * slope, o);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Importance-weighted combination of all sub-interests.
    Adaptive,
    /// Only the given sub-interest scores the item.
    OneHot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedScore {
    pub score: f64,
    /// Normalised importance weights γ.
    pub gamma: Vec<f64>,
    raw: Vec<f64>,
    dots: Vec<f64>,
}

/// `r_k = σ(w·[e; õ^k] + b)`, `γ = r / Σr`, `score = Σ γ_k ⟨õ^k, e⟩`.
pub fn fuse_score(subs: &Matrix, target: &[f64], fusion_w: &[f64], fusion_b: f64, fusion: Fusion) -> FusedScore {
    let (k, d) = subs.shape();
    let dots: Vec<f64> = (0..k).map(|r| dot(subs.row(r), target)).collect();
    match fusion {
        Fusion::OneHot(active) => {
            let mut gamma = vec![0.0; k];
            gamma[active] = 1.0;
            FusedScore {
                score: dots[active],
                gamma,
                raw: Vec::new(),
                dots,
            }
        }
        Fusion::Adaptive => {
            let target_part = dot(&fusion_w[..d], target) + fusion_b;
            let raw: Vec<f64> = (0..k)
                .map(|r| logistic(target_part + dot(&fusion_w[d..], subs.row(r))))
                .collect();
            let total: f64 = raw.iter().sum();
            let gamma: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let score = gamma.iter().zip(&dots).map(|(g, s)| g * s).sum();
            FusedScore {
                score,
                gamma,
                raw,
                dots,
            }
        }
    }
}

/// Gradient sinks for [`fuse_backward`].
pub struct FuseGrads<'a> {
    pub d_subs: &'a mut Matrix,
    pub d_target: &'a mut [f64],
    pub d_w: &'a mut [f64],
    pub d_b: &'a mut f64,
}

pub fn fuse_backward(
    subs: &Matrix,
    target: &[f64],
    fusion_w: &[f64],
    fused: &FusedScore,
    fusion: Fusion,
    d_score: f64,
    grads: FuseGrads<'_>,
) {
    let (k, d) = subs.shape();
    match fusion {
        Fusion::OneHot(active) => {
            axpy(grads.d_subs.row_mut(active), d_score, target);
            axpy(grads.d_target, d_score, subs.row(active));
        }
        Fusion::Adaptive => {
            let total: f64 = fused.raw.iter().sum();
            let d_gamma: Vec<f64> = fused.dots.iter().map(|s| s * d_score).collect();
            let mean: f64 = fused.gamma.iter().zip(&d_gamma).map(|(g, dg)| g * dg).sum();
            for r in 0..k {
                // through ⟨õ^k, e⟩
                let ds = fused.gamma[r] * d_score;
                axpy(grads.d_subs.row_mut(r), ds, target);
                axpy(grads.d_target, ds, subs.row(r));
                // through γ_k = r_k / Σ r
                let d_raw = (d_gamma[r] - mean) / total;
                let rk = fused.raw[r];
                let du = d_raw * rk * (1.0 - rk);
                axpy(&mut grads.d_w[..d], du, target);
                axpy(&mut grads.d_w[d..], du, subs.row(r));
                *grads.d_b += du;
                axpy(grads.d_target, du, &fusion_w[..d]);
                axpy(grads.d_subs.row_mut(r), du, &fusion_w[d..]);
            }
        }
    }
}
