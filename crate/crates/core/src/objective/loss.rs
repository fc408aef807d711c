//! BPR, distance-correlation and the weighted joint objective.

use serde::{Deserialize, Serialize};

use crate::diffkit::{logistic, neg_log_sigmoid, Matrix};
use crate::error::{Error, Result};

/// Mean of `−ln σ(y_i − y_j)` over `(y_i, y_j)` score pairs; 0 for none.
pub fn bpr_loss(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(pos, neg) in pairs {
        if !pos.is_finite() || !neg.is_finite() {
            return Err(Error::Numeric("non-finite score in BPR pair".into()));
        }
        total += neg_log_sigmoid(pos - neg);
    }
    Ok(total / pairs.len() as f64)
}

/// `∂/∂gap` of `−ln σ(gap)`.
pub fn bpr_gap_grad(gap: f64) -> f64 {
    -logistic(-gap)
}

fn distance_matrix(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (x[i] - x[j]).abs();
        }
    }
    a
}

/// Doubly-centred pairwise distance matrix, row-major `n×n`.
fn centered_distances(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut a = distance_matrix(x);
    let row_means: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            // symmetric, so column means equal row means
            a[i * n + j] += grand - row_means[i] - row_means[j];
        }
    }
    a
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Distance correlation between two equally long samples.
pub fn dcor(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(dcor_with_grad(x, y)?.0)
}

/// Distance correlation and its gradients with respect to `x` and `y`.
pub fn dcor_with_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Contract("dCor needs two samples of equal length ≥ 2".into()));
    }
    let a = centered_distances(x);
    let b = centered_distances(y);
    let vxy = mean_product(&a, &b);
    let vxx = mean_product(&a, &a);
    let vyy = mean_product(&b, &b);
    if vxx <= 0.0 || vyy <= 0.0 {
        return Err(Error::Degenerate("constant prototype has zero distance variance".into()));
    }
    let denom = (vxx * vyy).sqrt();
    let r = (vxy / denom).max(0.0);
    let value = r.sqrt().min(1.0);
    if r <= 0.0 {
        return Ok((0.0, vec![0.0; n], vec![0.0; n]));
    }
    // d dCor = dR / (2√R), dR = dVxy/√(VxxVyy) − R/2 (dVxx/Vxx + dVyy/Vyy)
    let scale = 1.0 / (2.0 * value);
    let nn = (n * n) as f64;
    let grad = |own: &[f64], own_c: &[f64], other_c: &[f64], v_own: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut d_cross = 0.0;
                let mut d_self = 0.0;
                for j in 0..n {
                    let s = (own[i] - own[j]).signum();
                    if own[i] == own[j] {
                        continue;
                    }
                    d_cross += other_c[i * n + j] * s;
                    d_self += own_c[i * n + j] * s;
                }
                let d_vxy = 2.0 * d_cross / nn;
                let d_vown = 4.0 * d_self / nn;
                scale * (d_vxy / denom - 0.5 * r * d_vown / v_own)
            })
            .collect()
    };
    let gx = grad(x, &a, &b, vxx);
    let gy = grad(y, &b, &a, vyy);
    Ok((value, gx, gy))
}

/// Mean pairwise dCor over the rows of `z`.
pub fn distance_correlation(z: &Matrix) -> Result<f64> {
    Ok(distance_correlation_with_grad(z)?.0)
}

/// Mean pairwise dCor over the rows of `z` and its gradient.
pub fn distance_correlation_with_grad(z: &Matrix) -> Result<(f64, Matrix)> {
    let (k, d) = z.shape();
    if k < 2 || d < 2 {
        return Err(Error::Contract("distance correlation needs K ≥ 2 and D ≥ 2".into()));
    }
    let n_pairs = (k * (k - 1) / 2) as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(k, d);
    for a in 0..k {
        for b in a + 1..k {
            let (v, ga, gb) = dcor_with_grad(z.row(a), z.row(b))?;
            total += v;
            for (g, x) in grad.row_mut(a).iter_mut().zip(&ga) {
                *g += x / n_pairs;
            }
            for (g, x) in grad.row_mut(b).iter_mut().zip(&gb) {
                *g += x / n_pairs;
            }
        }
    }
    Ok((total / n_pairs, grad))
}

/// Whether the disentanglement term pushes prototype correlation down or up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisDirection {
    #[default]
    Minimize,
    Maximize,
}

impl DisDirection {
    pub fn sign(self) -> f64 {
        match self {
            DisDirection::Minimize => 1.0,
            DisDirection::Maximize => -1.0,
        }
    }
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be a non-negative number, got {v}")));
            }
        }
        let sum = self.lambda1 + self.lambda2 + self.lambda3;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config("lambda", format!("lambda1 + lambda2 + lambda3 must be 1, got {sum}")));
        }
        Ok(())
    }

    /// Drops the observed-negative term and gives its weight to the first.
    pub fn without_negative_term(self) -> Self {
        Self {
            lambda1: 1.0 - self.lambda3,
            lambda2: 0.0,
            lambda3: self.lambda3,
        }
    }

    /// Drops the disentanglement term and rescales the rest to sum to 1.
    pub fn without_dis_term(self) -> Self {
        let rest = self.lambda1 + self.lambda2;
        if rest > 0.0 {
            Self {
                lambda1: self.lambda1 / rest,
                lambda2: self.lambda2 / rest,
                lambda3: 0.0,
            }
        } else {
            Self {
                lambda1: 1.0,
                lambda2: 0.0,
                lambda3: 0.0,
            }
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.6,
            lambda2: 0.3,
            lambda3: 0.1,
        }
    }
}

/// `λ1·L1 + λ2·L2 ± λ3·L_dis`.
pub fn joint_loss(l1: f64, l2: f64, l_dis: f64, weights: &LossWeights, direction: DisDirection) -> Result<f64> {
    weights.validate()?;
    Ok(weights.lambda1 * l1 + weights.lambda2 * l2 + direction.sign() * weights.lambda3 * l_dis)
}
