use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Logistic sigmoid, evaluated without overflow for any finite input.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, i.e. `ln(1 + e^{-x})`, stable for large |x|.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// In-place softmax of one row with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    if row.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
    Ok(())
}

pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r))?;
    }
    Ok(out)
}

/// Given `y = softmax(x)` for one row and `dy`, writes `dx` into `dy`'s place.
pub fn softmax_row_backward(y: &[f64], dy: &mut [f64]) {
    let inner: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
    for (d, &p) in dy.iter_mut().zip(y) {
        *d = p * (*d - inner);
    }
}

pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for r in 0..y.rows() {
        softmax_row_backward(y.row(r), dx.row_mut(r));
    }
    dx
}

/// Saved state of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalised rows before gain and bias.
    pub normed: Matrix,
    /// `1 / sqrt(var + eps)` per row.
    pub inv_std: Vec<f64>,
}

/// Row-wise layer normalisation with population variance.
pub fn layer_norm(
    m: &Matrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    let cols = m.cols();
    if cols < 2 {
        return Err(Error::Contract("layer_norm needs at least two columns".into()));
    }
    if gain.len() != cols || bias.len() != cols {
        return Err(Error::Contract("layer_norm gain/bias length mismatch".into()));
    }
    let mut normed = Matrix::zeros(m.rows(), cols);
    let mut out = Matrix::zeros(m.rows(), cols);
    let mut inv_std = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
        let denom = var + eps;
        if denom <= 0.0 {
            return Err(Error::Numeric(format!(
                "layer_norm row {r} has zero variance and eps = {eps}"
            )));
        }
        let is = 1.0 / denom.sqrt();
        inv_std.push(is);
        let n = normed.row_mut(r);
        for (c, x) in row.iter().enumerate() {
            n[c] = (x - mean) * is;
        }
        let o = out.row_mut(r);
        for c in 0..cols {
            o[c] = gain[c] * normed[(r, c)] + bias[c];
        }
    }
    out.check_finite("layer_norm output")?;
    Ok((out, LayerNormCache { normed, inv_std }))
}

/// Returns `dx` and accumulates into `dgain`/`dbias`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &Matrix,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Matrix {
    let cols = dy.cols() as f64;
    let mut dx = Matrix::zeros(dy.rows(), dy.cols());
    for r in 0..dy.rows() {
        let xhat = cache.normed.row(r);
        let g = dy.row(r);
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..g.len() {
            dgain[c] += g[c] * xhat[c];
            dbias[c] += g[c];
            let d = g[c] * gain[c];
            mean_d += d;
            mean_dx += d * xhat[c];
        }
        mean_d /= cols;
        mean_dx /= cols;
        let out = dx.row_mut(r);
        for c in 0..g.len() {
            let d = g[c] * gain[c];
            out[c] = cache.inv_std[r] * (d - mean_d - xhat[c] * mean_dx);
        }
    }
    dx
}
