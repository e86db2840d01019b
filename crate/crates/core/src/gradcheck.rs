//! Finite-difference helpers used by gradient-fidelity tests.

/// Central difference of a scalar function at `x0`.
pub fn central_diff(f: &mut dyn FnMut(f64) -> f64, x0: f64, eps: f64) -> f64 {
    (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps)
}

/// Relative error with an absolute floor so near-zero gradients compare
/// against an absolute tolerance instead of blowing up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-6, f64::max(a.abs(), b.abs()))
}
