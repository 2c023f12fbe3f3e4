//! Small numeric helpers used throughout the crate.

/// Compensated (Kahan) summation. Used wherever a sum feeds a tight
/// conservation or normalization check, so that the measurement itself does
/// not drown in rounding noise.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// log(sum(exp(x_i))) with the usual max shift.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Periodic trapezoidal rule on an equispaced grid over [-pi, pi): since the
/// integrand is periodic the rule collapses to `step * sum`.
pub fn periodic_trapezoid(values: &[f64], step: f64) -> f64 {
    step * kahan_sum(values.iter().cloned())
}

/// n equispaced values a, a+s, ... with s = (b-a)/n (right endpoint open).
pub fn open_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let s = (b - a) / n as f64;
    (0..n).map(|i| a + i as f64 * s).collect()
}

/// Logarithmically spaced grid with n points from a to b inclusive.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
