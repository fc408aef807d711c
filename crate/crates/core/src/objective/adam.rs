use serde::{Deserialize, Serialize};

use crate::diffkit::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<P: ParamSet> {
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: ParamSet> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

fn shapes<P: ParamSet>(p: &P) -> Vec<(usize, usize)> {
    p.tensors().iter().map(|(_, m)| m.shape()).collect()
}

/// One bias-corrected Adam update.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState<P>, config: &AdamConfig) -> Result<()> {
    let s = shapes(params);
    if s != shapes(grads) || s != shapes(&state.m) || s != shapes(&state.v) {
        return Err(Error::Contract("Adam state and gradient shapes do not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let g_all = grads.tensors();
    for (((p, (_, g)), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g_all)
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        let p = p.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::Matrix;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Matrix::zeros(1, 3);
        let g = Matrix::from_vec(1, 3, vec![0.5, -4.0, 100.0]).unwrap();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        for (x, gi) in p.data().iter().zip(g.data()) {
            assert!((x + 0.003 * gi.signum()).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(1, 4);
        let mut st = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [0.5, -0.4, 0.3, 0.6];
        let loss = |p: &Matrix| p.data().iter().zip(&target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>();
        let mut p = Matrix::zeros(1, 4);
        let mut st = AdamState::new(&p);
        let start = loss(&p);
        let cfg = AdamConfig::default();
        let mut prev = start;
        for step in 0..500 {
            let g = Matrix::from_fn(1, 4, |_, c| 2.0 * (p.data()[c] - target[c]));
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
            let l = loss(&p);
            if step < 250 {
                assert!(l <= prev + 1e-12, "loss rose at step {step}");
            }
            prev = l;
        }
        assert!(prev < 1e-3 * start, "{prev} vs {start}");
    }
}
