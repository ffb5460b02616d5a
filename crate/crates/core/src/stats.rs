//! Small statistical helpers shared across the crate: sample moments with
//! standard errors, overflow-safe log-mean-exp, OLS slopes and a golden
//! section minimizer.

use crate::error::{Error, Result};

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sample variance (unbiased).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// `-(1/p) * ln(mean(exp(-p x)))` with max-shift normalization, plus the
/// delta-method standard error.
pub fn exp_certainty_equivalent(wealths: &[f64], p: f64) -> Result<(f64, f64)> {
    if wealths.is_empty() {
        return Err(Error::EmptySample("certainty equivalent of empty sample".into()));
    }
    if !(p > 0.0) {
        return Err(Error::parameter(format!("risk aversion must be positive, got {p}")));
    }
    // exp(-p(x - m)) with m = min(x) keeps every weight in (0, 1].
    let m = wealths.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = wealths.iter().map(|x| (-p * (x - m)).exp()).collect();
    let (wbar, wse) = mean_se(&weights);
    let ce = m - wbar.ln() / p;
    let se = wse / (wbar * p);
    Ok((ce, se))
}

/// Difference of two certainty equivalents computed on the *same* paths,
/// `ce(a) - ce(b)`, with a delta-method standard error that accounts for the
/// correlation between the two weight sequences.
pub fn exp_ce_difference(a: &[f64], b: &[f64], p: f64) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::EmptySample("certainty-equivalent difference needs matched samples".into()));
    }
    let (ce_a, _) = exp_certainty_equivalent(a, p)?;
    let (ce_b, _) = exp_certainty_equivalent(b, p)?;
    let ma = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let mb = b.iter().cloned().fold(f64::INFINITY, f64::min);
    let wa: Vec<f64> = a.iter().map(|x| (-p * (x - ma)).exp()).collect();
    let wb: Vec<f64> = b.iter().map(|x| (-p * (x - mb)).exp()).collect();
    let n = wa.len() as f64;
    let (abar, _) = mean_se(&wa);
    let (bbar, _) = mean_se(&wb);
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for (x, y) in wa.iter().zip(&wb) {
        var_a += (x - abar) * (x - abar);
        var_b += (y - bbar) * (y - bbar);
        cov += (x - abar) * (y - bbar);
    }
    let denom = (n - 1.0).max(1.0);
    var_a /= denom;
    var_b /= denom;
    cov /= denom;
    let var_diff = (var_a / (abar * abar) + var_b / (bbar * bbar)
        - 2.0 * cov / (abar * bbar))
        / (p * p * n);
    Ok((ce_a - ce_b, var_diff.max(0.0).sqrt()))
}

/// Ordinary least squares slope of y on x, with its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::parameter("OLS needs at least two matched observations"));
    }
    let n = x.len() as f64;
    let xbar = x.iter().sum::<f64>() / n;
    let ybar = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xbar) * (v - xbar)).sum();
    if sxx == 0.0 {
        return Err(Error::parameter("OLS regressor is constant"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - xbar) * (v - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let r = v - intercept - slope * u;
            r * r
        })
        .sum();
    let se = (sse / dof / sxx).sqrt();
    Ok((slope, se))
}

/// Weighted least squares slope through points `(x, y)` with weights `w`.
pub fn wls_slope(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() != w.len() || x.len() < 2 {
        return Err(Error::parameter("WLS needs at least two matched observations"));
    }
    let sw: f64 = w.iter().sum();
    let xbar = x.iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>() / sw;
    let ybar = y.iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
        sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
    }
    if sxx == 0.0 {
        return Err(Error::parameter("WLS regressor is constant"));
    }
    Ok(sxy / sxx)
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
///
/// Shrinks the bracket until its width falls below `tol`, then returns the
/// midpoint and the objective there.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    debug_assert!(a < b);
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_of_constant_sample_is_the_constant() {
        let (ce, se) = exp_certainty_equivalent(&[3.25; 50], 2.0).unwrap();
        assert!((ce - 3.25).abs() < 1e-14);
        assert!(se.abs() < 1e-14);
    }

    #[test]
    fn ce_two_point_oracle() {
        // Wealths {0, ln(4)/p} equally likely: CE = -(1/p) ln((1 + 1/4)/2).
        let p = 1.7;
        let w = vec![0.0, 4f64.ln() / p];
        let (ce, _) = exp_certainty_equivalent(&w, p).unwrap();
        let expected = -(0.625f64).ln() / p;
        assert!((ce - expected).abs() < 1e-14, "ce={ce}, expected={expected}");
    }

    #[test]
    fn ce_below_sample_mean() {
        let w = vec![0.0, 1.0, 2.0, 5.0, -1.0];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let (ce, _) = exp_certainty_equivalent(&w, 0.8).unwrap();
        assert!(ce <= mean);
    }

    #[test]
    fn ce_empty_sample_errors() {
        assert!(exp_certainty_equivalent(&[], 1.0).is_err());
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (slope, se) = ols_slope(&x, &y).unwrap();
        assert!((slope - 2.5).abs() < 1e-12);
        assert!(se < 1e-9);
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, _) = golden_section(|v| (v - 0.37) * (v - 0.37), -4.0, 9.0, 1e-10);
        assert!((x - 0.37).abs() < 1e-8);
    }

    #[test]
    fn norm_cdf_reference_points() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(0.1) - 0.539827837277029).abs() < 1e-12);
        assert!((norm_cdf(-1.96) - 0.024997895148220).abs() < 1e-9);
    }
}
