use super::{Model, NnError, Reduction, Tensor4};
use crate::Scalar;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat parameter index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares every parameter gradient against `(L(p + eps) - L(p - eps)) / 2eps`.
///
/// Runs in train mode with a fixed dropout seed so that each loss evaluation
/// sees the same masks.
pub fn gradient_check<T: Scalar>(
    model: &Model<T>,
    batch: &Tensor4<T>,
    labels: &[usize],
    eps: f64,
    dropout_seed: u64,
) -> Result<GradCheckReport, NnError> {
    if !(eps > 0.0) {
        return Err(NnError::InvalidEpsilon(eps));
    }
    let (_, grads) = model.loss_and_gradients(batch, labels, true, dropout_seed, Reduction::Mean)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    for i in 0..grads.len() {
        let original = probe.params().get(i);
        probe.params_mut().set(i, T::lit(original.as_f64() + eps));
        let plus = probe.loss(batch, labels, true, dropout_seed, Reduction::Mean)?.as_f64();
        probe.params_mut().set(i, T::lit(original.as_f64() - eps));
        let minus = probe.loss(batch, labels, true, dropout_seed, Reduction::Mean)?.as_f64();
        probe.params_mut().set(i, original);

        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(i).as_f64();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        if rel > report.max_relative_error || i == 0 {
            report = GradCheckReport { max_relative_error: rel, worst_index: i, analytic, numeric, checked: 0 };
        }
    }
    report.checked = grads.len();
    Ok(report)
}
