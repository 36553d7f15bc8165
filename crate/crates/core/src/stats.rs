//! Small statistics helpers for the ensemble checks.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_err: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
/// With fewer than two distinct abscissae every field is `NaN`.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let nan = LinearFit { slope: f64::NAN, intercept: f64::NAN, slope_std_err: f64::NAN, r_squared: f64::NAN };
    if points.len() < 2 {
        return nan;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return nan;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_std_err = if points.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    LinearFit { slope, intercept, slope_std_err, r_squared }
}

/// Fit of `log y` against `log x`, dropping non-positive entries.
pub fn log_log_fit(points: &[(f64, f64)]) -> LinearFit {
    let logs: Vec<(f64, f64)> =
        points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0 && p.0.is_finite() && p.1.is_finite()).map(|p| (p.0.ln(), p.1.ln())).collect();
    linear_fit(&logs)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Linear-interpolation quantile, `q` in `[0, 1]`. `NaN` for empty input.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// `√(p(1 − p)/n)`.
pub fn binomial_std_err(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let f = linear_fit(&pts);
        assert!((f.slope + 2.0).abs() < 1e-14);
        assert!((f.intercept - 3.0).abs() < 1e-14);
        assert!(f.slope_std_err < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!(linear_fit(&[(1.0, 1.0), (1.0, 2.0)]).slope.is_nan());
    }

    #[test]
    fn slope_error_matches_textbook() {
        // y = (0, 1, 1, 3) at x = (0, 1, 2, 3): slope 0.9, residuals (0.1, 0.2, −0.7, 0.4).
        let f = linear_fit(&[(0.0, 0.0), (1.0, 1.0), (2.0, 1.0), (3.0, 3.0)]);
        assert!((f.slope - 0.9).abs() < 1e-12);
        assert!((f.intercept + 0.1).abs() < 1e-12);
        let se = (0.7f64 / 2.0 / 5.0).sqrt();
        assert!((f.slope_std_err - se).abs() < 1e-12);
    }

    #[test]
    fn power_law() {
        let pts: Vec<_> = (1..6).map(|i| (i as f64, 4.0 * (i as f64).powf(1.5))).collect();
        assert!((log_log_fit(&pts).slope - 1.5).abs() < 1e-12);
    }

    #[test]
    fn order_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert!(median(&[]).is_nan());
        assert_eq!(variance(&[1.0, 3.0]), 2.0);
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-14);
        assert_eq!(binomial_std_err(0.5, 100), 0.05);
    }
}
