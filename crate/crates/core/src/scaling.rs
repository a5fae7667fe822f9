//! Kibble-Zurek slope `R ∝ (|J0| T)^μ` and the finite-size extrapolation
//! `μ(N) = μ∞ + a N^{-b}`.

use std::io::BufRead;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::numerics::least_squares::{covariance, minimize, LmOptions, ResidualModel};
use crate::numerics::regression::weighted_line;
use crate::{Error, Result};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// One correlation length at one quench time.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    /// `|J0| T`.
    pub j0t: f64,
    pub r: f64,
    pub r_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlopeFit {
    pub mu: f64,
    /// `None` for two-point fits.
    pub mu_err: Option<f64>,
    pub intercept: f64,
    pub intercept_err: Option<f64>,
    /// χ² per degree of freedom; `None` without residual degrees of freedom.
    pub reduced_chi2: Option<f64>,
    /// 95% confidence interval on μ.
    pub ci95: Option<(f64, f64)>,
    pub points: usize,
    /// Weights came from the supplied `σ_R`; otherwise equal weights with
    /// errors scaled by the residual scatter.
    pub weighted: bool,
}

/// Weighted line fit of `ln R` on `ln(|J0| T)`.
pub fn fit_kzm_slope(points: &[ScalingPoint]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::invalid("slope fit needs at least 2 points"));
    }
    let n0 = points[0].n;
    if points.iter().any(|p| p.n != n0) {
        return Err(Error::invalid("slope fit mixes ion numbers"));
    }
    if let Some(p) = points.iter().find(|p| !(p.r > 0.0 && p.r.is_finite() && p.j0t > 0.0 && p.j0t.is_finite())) {
        return Err(Error::invalid(format!(
            "slope fit needs positive R and |J0|T, got R = {}, |J0|T = {}",
            p.r, p.j0t
        )));
    }
    let lo = points.iter().map(|p| p.j0t).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.j0t).fold(0.0, f64::max);
    if hi < 2.0 * lo {
        return Err(Error::invalid("quench times must span at least a factor of 2"));
    }
    let weighted = points.iter().all(|p| matches!(p.r_err, Some(e) if e > 0.0 && e.is_finite()));
    let x: Vec<f64> = points.iter().map(|p| p.j0t.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.r.ln()).collect();
    let w: Vec<f64> = points
        .iter()
        .map(|p| match (weighted, p.r_err) {
            (true, Some(e)) => (p.r / e).powi(2),
            _ => 1.0,
        })
        .collect();
    let line = weighted_line(&x, &y, &w)?;
    let dof = points.len() - 2;
    let reduced_chi2 = (dof > 0).then(|| line.chi2 / dof as f64);
    let (scale, quantile) = match (weighted, dof) {
        (_, 0) => (None, None),
        (true, _) => (Some(1.0), Some(Z95)),
        (false, d) => {
            let t = StudentsT::new(0.0, 1.0, d as f64).map_err(|e| Error::invalid(e.to_string()))?;
            (reduced_chi2, Some(t.inverse_cdf(0.975)))
        }
    };
    let mu_err = scale.map(|s| (line.var_slope * s).sqrt());
    Ok(SlopeFit {
        mu: line.slope,
        mu_err,
        intercept: line.intercept,
        intercept_err: scale.map(|s| (line.var_intercept * s).sqrt()),
        reduced_chi2,
        ci95: mu_err.zip(quantile).map(|(e, q)| (line.slope - q * e, line.slope + q * e)),
        points: points.len(),
        weighted,
    })
}

/// One fitted slope `μ ± σ_μ` for an ion number.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlopeEstimate {
    pub n: usize,
    pub mu: f64,
    pub sigma_mu: f64,
}

impl From<(usize, f64, f64)> for SlopeEstimate {
    fn from((n, mu, sigma_mu): (usize, f64, f64)) -> Self {
        SlopeEstimate { n, mu, sigma_mu }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FssFit {
    pub mu_inf: f64,
    pub mu_inf_err: Option<f64>,
    pub a: f64,
    pub a_err: Option<f64>,
    /// `None` when the flat-data rule pinned `a = 0`.
    pub b: Option<f64>,
    pub b_err: Option<f64>,
    /// Parameter covariance in the order `(μ∞, a, b)`.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub chi2: f64,
    /// The flat-data rule applied.
    pub degenerate: bool,
    /// Starting exponent of the winning start.
    pub start_b: Option<f64>,
}

struct FssModel {
    n: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl ResidualModel for FssModel {
    fn n_residuals(&self) -> usize {
        self.n.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        for (o, ((n, mu), s)) in out.iter_mut().zip(self.n.iter().zip(&self.mu).zip(&self.sigma)) {
            *o = (p[0] + p[1] * n.powf(-p[2]) - mu) / s;
        }
        p[2].is_finite() && p[2].abs() < 50.0
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) -> bool {
        for k in 0..self.n.len() {
            let q = self.n[k].powf(-p[2]);
            out[(k, 0)] = 1.0 / self.sigma[k];
            out[(k, 1)] = q / self.sigma[k];
            out[(k, 2)] = -p[1] * q * self.n[k].ln() / self.sigma[k];
        }
        true
    }
}

impl FssModel {
    /// `(μ∞, a)` by weighted linear least squares at fixed `b`.
    fn linear(&self, b: f64) -> Option<(f64, f64)> {
        let (mut s1, mut sq, mut sqq, mut sy, mut sqy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..self.n.len() {
            let w = self.sigma[k].powi(-2);
            let q = self.n[k].powf(-b);
            s1 += w;
            sq += w * q;
            sqq += w * q * q;
            sy += w * self.mu[k];
            sqy += w * q * self.mu[k];
        }
        let det = s1 * sqq - sq * sq;
        (det.abs() > 1e-300).then(|| ((sqq * sy - sq * sqy) / det, (s1 * sqy - sq * sy) / det))
    }
}

/// Starting exponents tried by the multi-start fit.
pub const FSS_STARTS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// σ-weighted fit of `μ(N) = μ∞ + a N^{-b}`.
pub fn finite_size_extrapolation(points: &[SlopeEstimate]) -> Result<FssFit> {
    if points.len() < 4 {
        return Err(Error::invalid("finite-size fit needs at least 4 ion numbers"));
    }
    let mut pts = points.to_vec();
    pts.sort_by_key(|p| p.n);
    if pts.windows(2).any(|w| w[0].n == w[1].n) || pts[0].n == 0 {
        return Err(Error::invalid("ion numbers must be distinct and positive"));
    }
    if pts.iter().any(|p| !(p.sigma_mu > 0.0 && p.sigma_mu.is_finite() && p.mu.is_finite())) {
        return Err(Error::invalid("every slope needs a finite value and positive error"));
    }
    let model = FssModel {
        n: pts.iter().map(|p| p.n as f64).collect(),
        mu: pts.iter().map(|p| p.mu).collect(),
        sigma: pts.iter().map(|p| p.sigma_mu).collect(),
    };
    let w: Vec<f64> = model.sigma.iter().map(|s| s.powi(-2)).collect();
    let wsum: f64 = w.iter().sum();
    let mean = w.iter().zip(&model.mu).map(|(w, m)| w * m).sum::<f64>() / wsum;
    let wvar = w.iter().zip(&model.mu).map(|(w, m)| w * (m - mean).powi(2)).sum::<f64>() / wsum;
    let mean_var = model.sigma.iter().map(|s| s * s).sum::<f64>() / model.sigma.len() as f64;
    if wvar < mean_var {
        let chi2 = w.iter().zip(&model.mu).map(|(w, m)| w * (m - mean).powi(2)).sum();
        return Ok(FssFit {
            mu_inf: mean,
            mu_inf_err: Some(wsum.sqrt().recip()),
            a: 0.0,
            a_err: None,
            b: None,
            b_err: None,
            covariance: None,
            chi2,
            degenerate: true,
            start_b: None,
        });
    }
    let opts = LmOptions {
        tol: 1e-12,
        patience: 400,
    };
    let mut best: Option<(f64, f64, crate::numerics::least_squares::LmOutcome)> = None;
    let mut fallback: Option<crate::numerics::least_squares::LmOutcome> = None;
    for &b0 in &FSS_STARTS {
        let Some((m0, a0)) = model.linear(b0) else { continue };
        let out = minimize(&model, &[m0, a0, b0], opts);
        if !out.converged {
            if fallback.as_ref().is_none_or(|f| out.cost < f.cost) {
                fallback = Some(out);
            }
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, _, prev)) => {
                let tie = (out.cost - prev.cost).abs() <= 1e-12 * prev.cost.max(1e-300);
                if tie {
                    out.params[2] < prev.params[2]
                } else {
                    out.cost < prev.cost
                }
            }
        };
        if better {
            best = Some((b0, out.cost, out));
        }
    }
    let Some((b0, chi2, out)) = best else {
        let f = fallback.map(|f| (f.params, f.cost)).unwrap_or((vec![], f64::NAN));
        return Err(Error::NonConvergence {
            what: "finite-size fit",
            iterations: FSS_STARTS.len(),
            residual: f.1.sqrt(),
            best: f.0,
        });
    };
    let cov = covariance(&out.jacobian);
    let err = |k: usize| cov.as_ref().map(|c| c[(k, k)].sqrt());
    Ok(FssFit {
        mu_inf: out.params[0],
        mu_inf_err: err(0),
        a: out.params[1],
        a_err: err(1),
        b: Some(out.params[2]),
        b_err: err(2),
        covariance: cov.map(|c| (0..3).map(|i| (0..3).map(|j| c[(i, j)]).collect()).collect()),
        chi2,
        degenerate: false,
        start_b: Some(b0),
    })
}

/// Spread of the finite-size fit when every `μ` is redrawn within its `σ_μ`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FssBootstrap {
    pub resamples: usize,
    pub failures: usize,
    pub mu_inf_mean: f64,
    pub mu_inf_sd: f64,
    /// 2.5% and 97.5% quantiles of μ∞.
    pub mu_inf_interval: (f64, f64),
}

pub fn fss_bootstrap(points: &[SlopeEstimate], resamples: usize, seed: u64) -> Result<FssBootstrap> {
    if resamples < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 resamples"));
    }
    finite_size_extrapolation(points)?;
    let mut values = Vec::with_capacity(resamples);
    let mut failures = 0;
    for k in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let drawn: Vec<SlopeEstimate> = points
            .iter()
            .map(|p| SlopeEstimate {
                mu: Normal::new(p.mu, p.sigma_mu).expect("validated sigma").sample(&mut rng),
                ..*p
            })
            .collect();
        match finite_size_extrapolation(&drawn) {
            Ok(f) => values.push(f.mu_inf),
            Err(_) => failures += 1,
        }
    }
    if values.len() < 2 {
        return Err(Error::NonConvergence {
            what: "finite-size bootstrap",
            iterations: resamples,
            residual: f64::NAN,
            best: values,
        });
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    values.sort_by(f64::total_cmp);
    let q = |p: f64| values[((p * (m - 1.0)).round() as usize).min(values.len() - 1)];
    Ok(FssBootstrap {
        resamples,
        failures,
        mu_inf_mean: mean,
        mu_inf_sd: sd,
        mu_inf_interval: (q(0.025), q(0.975)),
    })
}

fn csv_rows<R: BufRead>(input: R, header: &str, columns: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t == header {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = t.split(',').map(|v| v.trim().parse::<f64>()).collect();
        match vals {
            Ok(v) if v.len() == columns => rows.push((k + 1, v)),
            _ => {
                return Err(Error::MalformedData {
                    line: k + 1,
                    message: format!("expected {columns} numeric columns ({header})"),
                })
            }
        }
    }
    Ok(rows)
}

fn ion_count(line: usize, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::MalformedData {
            line,
            message: format!("ion number {v} is not a positive integer"),
        })
    }
}

/// Reads CSV `N,mu,sigma_mu`.
pub fn read_slopes_csv<R: BufRead>(input: R) -> Result<Vec<SlopeEstimate>> {
    csv_rows(input, "N,mu,sigma_mu", 3)?
        .into_iter()
        .map(|(line, v)| {
            Ok(SlopeEstimate {
                n: ion_count(line, v[0])?,
                mu: v[1],
                sigma_mu: v[2],
            })
        })
        .collect()
}

/// Reads CSV `N,J0T,R,sigma_R`.
pub fn read_scaling_csv<R: BufRead>(input: R) -> Result<Vec<ScalingPoint>> {
    csv_rows(input, "N,J0T,R,sigma_R", 4)?
        .into_iter()
        .map(|(line, v)| {
            Ok(ScalingPoint {
                n: ion_count(line, v[0])?,
                j0t: v[1],
                r: v[2],
                r_err: (v[3] > 0.0).then_some(v[3]),
            })
        })
        .collect()
}
