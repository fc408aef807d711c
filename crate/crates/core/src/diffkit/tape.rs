use crate::error::{Error, Result};

use super::matrix::Matrix;

/// A fixed, ordered collection of named parameter tensors.
///
/// Ordering of `tensors` and `tensors_mut` must agree; gradients and
/// optimiser moments are stored in values of the same type.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<(String, &Matrix)>;

    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }
}

impl ParamSet for Matrix {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![("value".to_string(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![self]
    }
}

impl ParamSet for Vec<Matrix> {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.iter().enumerate().map(|(i, m)| (format!("t{i}"), m)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().collect()
    }
}

/// Parameters paired with gradient accumulators of identical shape.
#[derive(Debug, Clone)]
pub struct ParamTape<P: ParamSet> {
    pub params: P,
    pub grads: P,
}

impl<P: ParamSet> ParamTape<P> {
    pub fn new(params: P) -> Self {
        let grads = params.zeros_like();
        Self { params, grads }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.tensors_mut() {
            g.fill(0.0);
        }
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.params
            .tensors()
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not recorded on the tape")))
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        let i = self.index_of(name)?;
        Ok(self.grads.tensors()[i].1)
    }

    pub fn accumulate(&mut self, name: &str, grad: &Matrix) -> Result<()> {
        let i = self.index_of(name)?;
        let target = self.grads.tensors_mut().swap_remove(i);
        if target.shape() != grad.shape() {
            return Err(Error::Contract(format!(
                "gradient for `{name}` has shape {:?}, parameter has {:?}",
                grad.shape(),
                target.shape()
            )));
        }
        target.add_assign(grad);
        Ok(())
    }
}

/// Adds `src` into `dst` tensor by tensor.
pub fn accumulate_all<P: ParamSet>(dst: &mut P, src: &P) {
    let src = src.tensors();
    for (d, (_, s)) in dst.tensors_mut().into_iter().zip(src) {
        d.add_assign(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_loss_has_unit_gradient() {
        let mut tape = ParamTape::new(vec![Matrix::from_fn(2, 3, |i, j| (i + j) as f64)]);
        // d(sum W)/dW = 1
        let ones = Matrix::from_fn(2, 3, |_, _| 1.0);
        tape.accumulate("t0", &ones).unwrap();
        assert!(tape.grad("t0").unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn untouched_parameter_has_zero_gradient() {
        let mut tape = ParamTape::new(vec![Matrix::zeros(2, 2), Matrix::zeros(1, 4)]);
        tape.accumulate("t0", &Matrix::from_fn(2, 2, |_, _| 3.0)).unwrap();
        assert!(tape.grad("t1").unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unrecorded_parameter_is_a_contract_error() {
        let tape = ParamTape::new(vec![Matrix::zeros(1, 1)]);
        assert!(matches!(tape.grad("missing"), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_grad_clears_exactly() {
        let mut tape = ParamTape::new(vec![Matrix::zeros(3, 3)]);
        tape.accumulate("t0", &Matrix::from_fn(3, 3, |i, j| (i * j) as f64 + 0.1))
            .unwrap();
        tape.zero_grad();
        assert!(tape.grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tape = ParamTape::new(vec![Matrix::zeros(2, 2)]);
        assert!(tape.accumulate("t0", &Matrix::zeros(3, 1)).is_err());
    }
}
