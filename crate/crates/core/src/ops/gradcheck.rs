//! Central finite-difference gradient checking.

use crate::tensor::Real;

/// Relative error with the floor used throughout the test suites.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Central-difference estimate of `d f / d x_i` for every coordinate.
pub fn numeric_gradient<T, F>(mut f: F, x: &[T], epsilon: f64) -> Vec<f64>
where
    T: Real,
    F: FnMut(&[T]) -> f64,
{
    let eps = T::from_f64_lossy(epsilon);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            // divide by the step actually taken after rounding to T
            let step = (orig + eps).as_f64() - (orig - eps).as_f64();
            (up - down) / step
        })
        .collect()
}

/// Worst relative error between `analytic` and central differences of `f`
/// around `x`, with denominator `max(|a|, |n|, 1e-8)`.
///
/// # Panics
/// If `epsilon <= 0` or the gradient length differs from `x`.
pub fn grad_check<T, F>(f: F, x: &[T], analytic: &[T], epsilon: f64) -> f64
where
    T: Real,
    F: FnMut(&[T]) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert_eq!(x.len(), analytic.len(), "gradient length must match input");
    numeric_gradient(f, x, epsilon)
        .into_iter()
        .zip(analytic)
        .map(|(n, a)| relative_error(a.as_f64(), n))
        .fold(0.0, f64::max)
}
