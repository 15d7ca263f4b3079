//! Central finite differences, the independent oracle for backward rules.

/// Gradient of `f` at `x` by central differences with the given step.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Max absolute and max relative deviation between two gradient vectors.
pub fn gradient_deviation(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    assert_eq!(analytic.len(), numeric.len());
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        max_abs = max_abs.max(abs);
        let denom = a.abs().max(n.abs());
        if denom > 1e-8 {
            max_rel = max_rel.max(abs / denom);
        }
    }
    (max_abs, max_rel)
}
