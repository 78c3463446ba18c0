//! Finite-difference utilities.
//!
//! These only ever evaluate forward values, so they serve as an independent
//! oracle for the tape's analytic gradients.

use crate::error::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe)?;
        probe[i] = orig - step;
        let lo = f(&probe)?;
        probe[i] = orig;
        out.push((hi - lo) / (2.0 * step));
    }
    Ok(out)
}

/// Central-difference directional derivative of a vector-valued function.
pub fn central_directional<F>(mut f: F, x: &[f64], direction: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let shifted = |sign: f64| -> Vec<f64> {
        x.iter()
            .zip(direction)
            .map(|(a, d)| a + sign * step * d)
            .collect()
    };
    let hi = f(&shifted(1.0))?;
    let lo = f(&shifted(-1.0))?;
    Ok(hi
        .iter()
        .zip(&lo)
        .map(|(h, l)| (h - l) / (2.0 * step))
        .collect())
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, and 0 when both are exactly zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on mismatched lengths");
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
