//! Weighted straight-line regression.

use crate::{Error, Result};

/// Result of fitting `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub var_slope: f64,
    pub var_intercept: f64,
    pub cov_slope_intercept: f64,
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    pub n: usize,
}

/// Fits a line with weights `w_i` (inverse variances when the errors are
/// known). The returned variances are `(XᵀWX)⁻¹` and are not rescaled by χ².
///
/// Sums are centred on the weighted mean of `x`, so a uniform shift of `y`
/// only moves the intercept.
pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return Err(Error::invalid("line fit needs at least two matching points"));
    }
    if w.iter().any(|&wi| !(wi > 0.0 && wi.is_finite())) {
        return Err(Error::invalid("line fit weights must be positive and finite"));
    }
    let sw: f64 = w.iter().sum();
    let xbar = x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ybar = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        let dx = x[k] - xbar;
        sxx += w[k] * dx * dx;
        sxy += w[k] * dx * (y[k] - ybar);
    }
    if !(sxx > 0.0) {
        return Err(Error::invalid("line fit needs at least two distinct abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let chi2 = (0..n)
        .map(|k| {
            let r = y[k] - intercept - slope * x[k];
            w[k] * r * r
        })
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        var_slope: 1.0 / sxx,
        var_intercept: 1.0 / sw + xbar * xbar / sxx,
        cov_slope_intercept: -xbar / sxx,
        chi2,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = weighted_line(&x, &y, &[1.0; 4]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!(f.chi2 < 1e-25);
    }

    #[test]
    fn variance_matches_textbook_formula() {
        let x = [1.0, 2.0, 4.0];
        let y = [0.3, 0.1, 0.9];
        let w = [4.0, 1.0, 2.0];
        let f = weighted_line(&x, &y, &w).unwrap();
        let s: f64 = w.iter().sum();
        let sx: f64 = x.iter().zip(&w).map(|(x, w)| w * x).sum();
        let sxx: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let det = s * sxx - sx * sx;
        assert!((f.var_slope - s / det).abs() < 1e-12);
        assert!((f.var_intercept - sxx / det).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_abscissae() {
        assert!(weighted_line(&[1.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]).is_err());
    }
}
