use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffkit::{Matrix, ParamSet};
use crate::error::{Error, Result};

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub ln_gain: Matrix,
    pub ln_bias: Matrix,
    pub ffn_w1: Matrix,
    pub ffn_b1: Matrix,
    pub ffn_w2: Matrix,
    pub ffn_b2: Matrix,
}

/// All trainable tensors. Vectors are stored as `1 × n` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `N × D`
    pub item_embeddings: Matrix,
    /// `K × D`
    pub prototypes: Matrix,
    /// `L × D`
    pub positions: Matrix,
    pub blocks: Vec<BlockParams>,
    /// `1 × 2D`, target-item half first.
    pub fusion_w: Matrix,
    /// `1 × 1`
    pub fusion_b: Matrix,
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Rows orthonormalised by Gram–Schmidt; needs `rows <= cols`.
fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while out.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &out {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        out.push(v);
    }
    Matrix::from_rows(&out).expect("rectangular")
}

impl ModelParams {
    /// Zero-mean uniform init with scale `1/√D`; prototypes orthonormal
    /// when `K ≤ D` (or zero when configured).
    pub fn init(config: &ModelConfig, n_items: usize) -> Result<Self> {
        config.validate()?;
        if n_items == 0 {
            return Err(Error::config("n_items", "vocabulary is empty"));
        }
        let d = config.dim;
        let k = config.n_interests;
        let scale = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let item_embeddings = uniform(n_items, d, scale, &mut rng);
        let positions = uniform(config.max_len, d, scale, &mut rng);
        let blocks = (0..config.n_blocks)
            .map(|_| BlockParams {
                wq: uniform(d, d, scale, &mut rng),
                wk: uniform(d, d, scale, &mut rng),
                wv: uniform(d, d, scale, &mut rng),
                ln_gain: Matrix::from_fn(1, d, |_, _| 1.0),
                ln_bias: Matrix::zeros(1, d),
                ffn_w1: uniform(d, d, scale, &mut rng),
                ffn_b1: Matrix::zeros(1, d),
                ffn_w2: uniform(d, d, scale, &mut rng),
                ffn_b2: Matrix::zeros(1, d),
            })
            .collect();
        let fusion_w = uniform(1, 2 * d, scale, &mut rng);
        let prototypes = if config.zero_prototypes {
            Matrix::zeros(k, d)
        } else if k <= d {
            orthonormal(k, d, &mut rng)
        } else {
            uniform(k, d, scale, &mut rng)
        };
        Ok(Self {
            item_embeddings,
            prototypes,
            positions,
            blocks,
            fusion_w,
            fusion_b: Matrix::zeros(1, 1),
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.item_embeddings.cols()
    }

    /// Checks tensor shapes against `config` and that all values are finite.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let d = config.dim;
        let expect = |m: &Matrix, shape: (usize, usize), name: &str| {
            if m.shape() != shape {
                Err(Error::Contract(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    m.shape()
                )))
            } else {
                m.check_finite(name)
            }
        };
        expect(&self.item_embeddings, (self.n_items(), d), "item_embeddings")?;
        expect(&self.prototypes, (config.n_interests, d), "prototypes")?;
        expect(&self.positions, (config.max_len, d), "positions")?;
        if self.blocks.len() != config.n_blocks {
            return Err(Error::Contract("block count mismatch".into()));
        }
        for b in &self.blocks {
            for (m, shape, name) in [
                (&b.wq, (d, d), "wq"),
                (&b.wk, (d, d), "wk"),
                (&b.wv, (d, d), "wv"),
                (&b.ln_gain, (1, d), "ln_gain"),
                (&b.ln_bias, (1, d), "ln_bias"),
                (&b.ffn_w1, (d, d), "ffn_w1"),
                (&b.ffn_b1, (1, d), "ffn_b1"),
                (&b.ffn_w2, (d, d), "ffn_w2"),
                (&b.ffn_b2, (1, d), "ffn_b2"),
            ] {
                expect(m, shape, name)?;
            }
        }
        expect(&self.fusion_w, (1, 2 * d), "fusion_w")?;
        expect(&self.fusion_b, (1, 1), "fusion_b")
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("item_embeddings".to_string(), &self.item_embeddings),
            ("prototypes".to_string(), &self.prototypes),
            ("positions".to_string(), &self.positions),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend([
                (format!("block{i}.wq"), &b.wq),
                (format!("block{i}.wk"), &b.wk),
                (format!("block{i}.wv"), &b.wv),
                (format!("block{i}.ln_gain"), &b.ln_gain),
                (format!("block{i}.ln_bias"), &b.ln_bias),
                (format!("block{i}.ffn_w1"), &b.ffn_w1),
                (format!("block{i}.ffn_b1"), &b.ffn_b1),
                (format!("block{i}.ffn_w2"), &b.ffn_w2),
                (format!("block{i}.ffn_b2"), &b.ffn_b2),
            ]);
        }
        out.push(("fusion_w".to_string(), &self.fusion_w));
        out.push(("fusion_b".to_string(), &self.fusion_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.item_embeddings,
            &mut self.prototypes,
            &mut self.positions,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.ln_gain,
                &mut b.ln_bias,
                &mut b.ffn_w1,
                &mut b.ffn_b1,
                &mut b.ffn_w2,
                &mut b.ffn_b2,
            ]);
        }
        out.push(&mut self.fusion_w);
        out.push(&mut self.fusion_b);
        out
    }
}
