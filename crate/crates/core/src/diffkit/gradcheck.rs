use crate::error::{Error, Result};

use super::tape::ParamSet;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares an analytic gradient with central finite differences.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
/// `loss` must be deterministic and smooth in a `h`-neighbourhood of
/// `params`; kinks such as `|x|` at 0 or argmax switches are not supported.
pub fn grad_check<P, F>(loss: F, params: &P, analytic: &P, h: f64) -> Result<GradCheckReport>
where
    P: ParamSet,
    F: Fn(&P) -> Result<f64>,
{
    let base = loss(params)?;
    let again = loss(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(
            "grad_check: loss function is not deterministic".into(),
        ));
    }

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = analytic
        .tensors()
        .into_iter()
        .map(|(_, m)| m.data().to_vec())
        .collect();
    if analytic.len() != names.len() {
        return Err(Error::Contract("grad_check: gradient layout mismatch".into()));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (t, name) in names.iter().enumerate() {
        let len = probe.tensors()[t].1.data().len();
        if analytic[t].len() != len {
            return Err(Error::Contract(format!("grad_check: `{name}` shape mismatch")));
        }
        for i in 0..len {
            let orig = probe.tensors()[t].1.data()[i];
            probe.tensors_mut()[t].data_mut()[i] = orig + h;
            let plus = loss(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig - h;
            let minus = loss(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[t][i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
