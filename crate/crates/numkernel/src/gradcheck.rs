//! Central finite differences for checking tape gradients.

use crate::Result;

/// Default step for central differences at `f64` precision.
pub const STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for each requested coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], indices: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe)?;
            probe[i] = orig - step;
            let down = f(&probe)?;
            probe[i] = orig;
            Ok((up - down) / (2.0 * step))
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// Largest relative error over paired slices.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}
