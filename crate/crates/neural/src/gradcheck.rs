//! Finite-difference gradient checking. The numeric side evaluates the
//! forward pass only, so it stays independent of the backward
//! implementation it certifies.

use ndarray::ArrayD;

/// Relative step used throughout the gradient-check suites.
pub const FD_STEP: f64 = 1e-4;

/// Relative-error threshold for a passing check (64-bit graphs).
pub const FD_TOL: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`, with per-coordinate step
/// `step * max(1, |x_i|)`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&ArrayD<f64>) -> f64,
    x: &ArrayD<f64>,
    step: f64,
) -> ArrayD<f64> {
    let mut grad = ArrayD::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let base = x.as_slice().expect("standard layout")[idx];
        let h = step * base.abs().max(1.0);
        probe.as_slice_mut().expect("layout")[idx] = base + h;
        let plus = f(&probe);
        probe.as_slice_mut().expect("layout")[idx] = base - h;
        let minus = f(&probe);
        probe.as_slice_mut().expect("layout")[idx] = base;
        grad.as_slice_mut().expect("layout")[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst relative disagreement between an analytic and a numeric
/// gradient: `|a - n| / max(1, |a| + |n|)` per coordinate.
pub fn max_rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn finite_diff_recovers_quadratic_gradient() {
        let x = ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, -2.0, 0.5]).unwrap();
        let g = finite_diff_grad(|v| v.iter().map(|&t| t * t).sum(), &x, FD_STEP);
        let expected = x.mapv(|v| 2.0 * v);
        assert!(max_rel_error(&expected, &g) < 1e-8);
    }
}
