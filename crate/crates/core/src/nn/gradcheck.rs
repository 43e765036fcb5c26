use crate::error::{Error, Result};

const REL_ERROR_FLOOR: f64 = 1e-8;

/// Central-difference gradient verifier. `loss_and_grad` evaluates a pure
/// scalar loss and its analytic gradient at the given parameter vector.
/// Returns the max over parameters of
/// |analytic - numeric| / max(|analytic| + |numeric|, floor).
pub fn finite_difference_check<F>(loss_and_grad: F, params: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = loss_and_grad(params);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss value {value}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "finite_difference_check",
            format!("gradient of length {}", params.len()),
            format!("gradient of length {}", analytic.len()),
        ));
    }
    let mut max_err: f64 = 0.0;
    let mut perturbed = params.to_vec();
    for i in 0..params.len() {
        perturbed[i] = params[i] + step;
        let (plus, _) = loss_and_grad(&perturbed);
        perturbed[i] = params[i] - step;
        let (minus, _) = loss_and_grad(&perturbed);
        perturbed[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss during finite differences at parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let denom = (analytic[i].abs() + numeric.abs()).max(REL_ERROR_FLOOR);
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}
