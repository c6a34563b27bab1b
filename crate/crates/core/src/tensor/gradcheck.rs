//! Finite-difference gradient checker.

use super::tape::{backward, clear_tape, no_grad};
use super::Tensor;
use crate::error::{Error, Result};

/// Relative disagreement between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compare the analytic gradient of a scalar function against central finite
/// differences at `point`. Returns the maximum relative error over all
/// coordinates.
///
/// Any recording in progress on this thread's tape is discarded: the checker
/// runs its own forward/backward passes.
pub fn grad_check<F>(mut f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Tensor,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("grad_check epsilon must be > 0, got {epsilon}")));
    }
    clear_tape();

    let p = point.to_param();
    let loss = f(&p);
    if loss.len() != 1 {
        return Err(Error::LossNotScalar(loss.shape().to_vec()));
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "grad_check forward" });
    }
    let grads = backward(&loss)?;
    let analytic = grads.get_or_zeros(&p);

    no_grad(|| {
        let mut max_err = 0.0f64;
        for i in 0..point.len() {
            let base = point.at(i);
            let plus = f(&point.with_value_at(i, base + epsilon)).value();
            let minus = f(&point.with_value_at(i, base - epsilon)).value();
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { op: "grad_check finite difference" });
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            max_err = max_err.max(relative_error(analytic.at(i), numeric));
        }
        Ok(max_err)
    })
}
