//! Binomial confidence intervals and 1%-crossing interpolation.

/// Two-sided 95% standard-normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// 95% Wilson score interval for `errors` out of `trials`.
///
/// With zero errors the lower end is 0 and the upper end is the one-sided
/// 95% bound `1 − 0.05^{1/n}`.
pub fn wilson_ci_95(errors: u64, trials: u64) -> (f64, f64) {
    assert!(trials > 0 && errors <= trials, "need 0 <= errors <= trials, trials > 0");
    let n = trials as f64;
    if errors == 0 {
        return (0.0, 1.0 - 0.05f64.powf(1.0 / n));
    }
    let p = errors as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// SNR at which an error-rate curve crosses `target`, by linear
/// interpolation of `log10(rate)` against SNR between the first bracketing
/// pair of grid points. `None` if the curve never crosses.
pub fn crossing_snr(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if y0 >= target && y1 <= target {
            if y0 == y1 {
                return Some(x0);
            }
            if y1 == 0.0 {
                // log-interpolation is undefined at zero; fall back to linear.
                return Some(x0 + (y0 - target) / (y0 - y1) * (x1 - x0));
            }
            let (l0, l1, lt) = (y0.log10(), y1.log10(), target.log10());
            return Some(x0 + (l0 - lt) / (l0 - l1) * (x1 - x0));
        }
    }
    None
}
