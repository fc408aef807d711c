//! Sub-interest-modulated self-attention encoder.
//!
//! Per block: `X → Q,K,V`, `α = softmax(QKᵀ/√d_h)` under the causal mask,
//! `α̂ = β ⊙ α`, `N = LayerNorm(α̂V + X)`, `O = FFN(N) + N` with
//! `FFN(n) = relu(n W1 + b1) W2 + b2`. The first block's input is item
//! embeddings plus learned position embeddings.

use crate::diffkit::{
    axpy, dot, layer_norm, layer_norm_backward, softmax_in_place, softmax_row_backward, LayerNormCache, Matrix,
};
use crate::error::{Error, Result};

use super::assign::SubInterestAssignment;
use super::config::ModelConfig;
use super::params::{BlockParams, ModelParams};

#[derive(Debug, Clone)]
struct BlockCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head, `T × T`; entries above the diagonal stay 0 when masked.
    alpha: Vec<Matrix>,
    ln: LayerNormCache,
    n: Matrix,
    h1: Matrix,
}

/// Forward state needed by [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncoderCache {
    items: Vec<usize>,
    beta: Option<Matrix>,
    blocks: Vec<BlockCache>,
    /// `T × D` encoder output; row `t` is `o_t`.
    pub output: Matrix,
}

impl EncoderCache {
    /// Attention weights of `head` in `block` before β modulation.
    pub fn attention(&self, block: usize, head: usize) -> &Matrix {
        &self.blocks[block].alpha[head]
    }

    pub fn beta(&self) -> Option<&Matrix> {
        self.beta.as_ref()
    }

    /// β-modulated attention weights `α̂`.
    pub fn modulated_attention(&self, block: usize, head: usize) -> Matrix {
        let mut a = self.blocks[block].alpha[head].clone();
        if let Some(beta) = &self.beta {
            for (x, b) in a.data_mut().iter_mut().zip(beta.data()) {
                *x *= b;
            }
        }
        a
    }
}

/// `β[q][j]` is `beta1` when key `j` shares query `q`'s active
/// sub-interest, else `1 - beta1`.
pub fn beta_matrix(assignment: &SubInterestAssignment, config: &ModelConfig) -> Matrix {
    let t = assignment.per_position.len();
    let (b1, b2) = (config.beta1, config.beta2());
    Matrix::from_fn(t, t, |q, j| {
        if assignment.per_position[j] == assignment.reference[q] {
            b1
        } else {
            b2
        }
    })
}

fn visible(config: &ModelConfig, q: usize, t: usize) -> usize {
    if config.causal_mask {
        q + 1
    } else {
        t
    }
}

fn block_forward(
    x: Matrix,
    p: &BlockParams,
    beta: Option<&Matrix>,
    config: &ModelConfig,
) -> Result<(Matrix, BlockCache)> {
    let t = x.rows();
    let d = config.dim;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.matmul(&p.wq);
    let k = x.matmul(&p.wk);
    let v = x.matmul(&p.wv);

    let mut attn = Matrix::zeros(t, d);
    let mut alphas = Vec::with_capacity(config.n_heads);
    let mut scores = vec![0.0; t];
    for h in 0..config.n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut alpha = Matrix::zeros(t, t);
        for qi in 0..t {
            let vis = visible(config, qi, t);
            let qrow = &q.row(qi)[cols.clone()];
            for (j, s) in scores[..vis].iter_mut().enumerate() {
                *s = dot(qrow, &k.row(j)[cols.clone()]) * scale;
            }
            softmax_in_place(&mut scores[..vis])?;
            alpha.row_mut(qi)[..vis].copy_from_slice(&scores[..vis]);
            let out = &mut attn.row_mut(qi)[cols.clone()];
            for j in 0..vis {
                let w = scores[j] * beta.map_or(1.0, |b| b[(qi, j)]);
                axpy(out, w, &v.row(j)[cols.clone()]);
            }
        }
        alphas.push(alpha);
    }

    let mut r = attn;
    r.add_assign(&x);
    let (n, ln) = layer_norm(&r, p.ln_gain.row(0), p.ln_bias.row(0), config.layer_norm_eps)?;
    let mut h1 = n.matmul(&p.ffn_w1);
    for row in 0..t {
        for (a, b) in h1.row_mut(row).iter_mut().zip(p.ffn_b1.row(0)) {
            *a += b;
        }
    }
    let mut hr = h1.clone();
    hr.data_mut().iter_mut().for_each(|a| *a = a.max(0.0));
    let mut out = hr.matmul(&p.ffn_w2);
    for row in 0..t {
        for (a, b) in out.row_mut(row).iter_mut().zip(p.ffn_b2.row(0)) {
            *a += b;
        }
    }
    out.add_assign(&n);
    out.check_finite("encoder block output")?;
    Ok((
        out,
        BlockCache {
            x,
            q,
            k,
            v,
            alpha: alphas,
            ln,
            n,
            h1,
        },
    ))
}

/// Runs the encoder over `items` (at most `max_len` of them).
pub fn encode(
    items: &[usize],
    beta: Option<Matrix>,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<EncoderCache> {
    let t = items.len();
    if t == 0 {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    if t > config.max_len {
        return Err(Error::Contract(format!(
            "sequence of length {t} exceeds max_len {}",
            config.max_len
        )));
    }
    if let Some(&bad) = items.iter().find(|&&i| i >= params.n_items()) {
        return Err(Error::Vocabulary(format!("item index {bad}")));
    }
    if let Some(b) = &beta {
        if b.shape() != (t, t) {
            return Err(Error::Contract("beta matrix shape mismatch".into()));
        }
    }
    let mut x = Matrix::from_fn(t, config.dim, |r, c| {
        params.item_embeddings[(items[r], c)] + params.positions[(r, c)]
    });
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for bp in &params.blocks {
        let (out, cache) = block_forward(x, bp, beta.as_ref(), config)?;
        blocks.push(cache);
        x = out;
    }
    Ok(EncoderCache {
        items: items.to_vec(),
        beta,
        blocks,
        output: x,
    })
}

fn block_backward(
    cache: &BlockCache,
    p: &BlockParams,
    g: &mut BlockParams,
    beta: Option<&Matrix>,
    d_out: &Matrix,
    config: &ModelConfig,
) -> Matrix {
    let t = d_out.rows();
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // O = FFN(N) + N
    let mut hr = cache.h1.clone();
    hr.data_mut().iter_mut().for_each(|a| *a = a.max(0.0));
    g.ffn_w2.add_assign(&hr.t_matmul(d_out));
    for row in 0..t {
        axpy(g.ffn_b2.row_mut(0), 1.0, d_out.row(row));
    }
    let mut dh1 = d_out.matmul_t(&p.ffn_w2);
    for (d, h) in dh1.data_mut().iter_mut().zip(cache.h1.data()) {
        if *h <= 0.0 {
            *d = 0.0;
        }
    }
    g.ffn_w1.add_assign(&cache.n.t_matmul(&dh1));
    for row in 0..t {
        axpy(g.ffn_b1.row_mut(0), 1.0, dh1.row(row));
    }
    let mut dn = dh1.matmul_t(&p.ffn_w1);
    dn.add_assign(d_out);

    // N = LayerNorm(α̂V + X)
    let dr = layer_norm_backward(
        &cache.ln,
        p.ln_gain.row(0),
        &dn,
        g.ln_gain.row_mut(0),
        g.ln_bias.row_mut(0),
    );
    let mut dx = dr.clone();

    let d = config.dim;
    let mut dq = Matrix::zeros(t, d);
    let mut dk = Matrix::zeros(t, d);
    let mut dv = Matrix::zeros(t, d);
    let mut dalpha = vec![0.0; t];
    for h in 0..config.n_heads {
        let cols = h * dh..(h + 1) * dh;
        let alpha = &cache.alpha[h];
        for qi in 0..t {
            let vis = visible(config, qi, t);
            let dattn = &dr.row(qi)[cols.clone()];
            for j in 0..vis {
                let b = beta.map_or(1.0, |m| m[(qi, j)]);
                dalpha[j] = b * dot(dattn, &cache.v.row(j)[cols.clone()]);
                axpy(&mut dv.row_mut(j)[cols.clone()], b * alpha[(qi, j)], dattn);
            }
            softmax_row_backward(&alpha.row(qi)[..vis], &mut dalpha[..vis]);
            for j in 0..vis {
                let ds = dalpha[j] * scale;
                if ds == 0.0 {
                    continue;
                }
                axpy(&mut dq.row_mut(qi)[cols.clone()], ds, &cache.k.row(j)[cols.clone()]);
                axpy(&mut dk.row_mut(j)[cols.clone()], ds, &cache.q.row(qi)[cols.clone()]);
            }
        }
    }
    g.wq.add_assign(&cache.x.t_matmul(&dq));
    g.wk.add_assign(&cache.x.t_matmul(&dk));
    g.wv.add_assign(&cache.x.t_matmul(&dv));
    dx.add_assign(&dq.matmul_t(&p.wq));
    dx.add_assign(&dk.matmul_t(&p.wk));
    dx.add_assign(&dv.matmul_t(&p.wv));
    dx
}

/// Accumulates parameter gradients for `d_output` (`∂L/∂O`, `T × D`).
/// β is treated as a constant.
pub fn encode_backward(
    cache: &EncoderCache,
    params: &ModelParams,
    d_output: &Matrix,
    grads: &mut ModelParams,
    config: &ModelConfig,
) {
    let mut d = d_output.clone();
    for b in (0..params.blocks.len()).rev() {
        d = block_backward(
            &cache.blocks[b],
            &params.blocks[b],
            &mut grads.blocks[b],
            cache.beta.as_ref(),
            &d,
            config,
        );
    }
    for (r, &item) in cache.items.iter().enumerate() {
        axpy(grads.item_embeddings.row_mut(item), 1.0, d.row(r));
        axpy(grads.positions.row_mut(r), 1.0, d.row(r));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::{grad_check, ParamSet};

    fn cfg() -> ModelConfig {
        ModelConfig {
            dim: 6,
            max_len: 5,
            n_interests: 2,
            n_heads: 2,
            n_blocks: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn single_item_attends_to_itself() {
        let c = ModelConfig { max_len: 1, ..cfg() };
        let p = ModelParams::init(&c, 4).unwrap();
        let out = encode(&[2], None, &p, &c).unwrap();
        assert_eq!(out.output.shape(), (1, 6));
        assert!(out.output.is_finite());
        assert_eq!(out.attention(0, 0)[(0, 0)], 1.0);
    }

    #[test]
    fn overlong_and_unknown_inputs_are_rejected() {
        let c = cfg();
        let p = ModelParams::init(&c, 4).unwrap();
        assert!(matches!(encode(&[0; 6], None, &p, &c), Err(Error::Contract(_))));
        assert!(matches!(encode(&[9], None, &p, &c), Err(Error::Vocabulary(_))));
        assert!(encode(&[], None, &p, &c).is_err());
    }

    #[test]
    fn uniform_beta_scales_attention() {
        let c = cfg();
        let p = ModelParams::init(&c, 6).unwrap();
        let items = [0, 3, 5, 1];
        let beta = Matrix::from_fn(4, 4, |_, _| 0.6);
        let enc = encode(&items, Some(beta), &p, &c).unwrap();
        let raw = enc.attention(0, 1);
        let modulated = enc.modulated_attention(0, 1);
        for (a, m) in raw.data().iter().zip(modulated.data()) {
            assert_eq!(*m, 0.6 * a);
        }
    }

    #[test]
    fn causal_output_ignores_future_items() {
        let c = cfg();
        let p = ModelParams::init(&c, 8).unwrap();
        let a = encode(&[1, 2, 3, 4], None, &p, &c).unwrap();
        let b = encode(&[1, 2, 7, 0], None, &p, &c).unwrap();
        assert_eq!(a.output.row(1), b.output.row(1));
        assert_ne!(a.output.row(2), b.output.row(2));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let c = cfg();
        let params = ModelParams::init(&c, 7).unwrap();
        let items = [3, 1, 4, 1, 5];
        let beta = Matrix::from_fn(5, 5, |q, j| if (q + j) % 3 == 0 { 0.7 } else { 0.3 });
        let w = Matrix::from_fn(5, 6, |i, j| ((i * 6 + j) as f64 * 0.61).sin());
        let loss = |p: &ModelParams| {
            let e = encode(&items, Some(beta.clone()), p, &c)?;
            Ok(e.output.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
        };
        let enc = encode(&items, Some(beta.clone()), &params, &c).unwrap();
        let mut grads = params.zeros_like();
        encode_backward(&enc, &params, &w, &mut grads, &c);
        let report = grad_check(loss, &params, &grads, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}
