//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use crate::error::Result;

/// Default perturbation for 64-bit checks.
pub const EPSILON: f64 = 1e-5;

/// Central-difference estimate of `∇f(x)`.
pub fn central_difference(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe)?;
        probe[i] = x[i] - eps;
        let minus = f(&probe)?;
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when the two agree exactly.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    if diff == 0.0 {
        return 0.0;
    }
    let scale = super::norm(analytic).max(super::norm(numeric));
    diff / scale.max(f64::MIN_POSITIVE)
}
