//! Laser-induced Ising couplings and their calibration-side summaries.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::chain::{IonChain, ModeSpectrum};
use crate::error::SignPairs;
use crate::numerics::regression::weighted_line;
use crate::units::{self, HBAR};
use crate::{Error, Result};

/// Bichromatic Raman drive.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserParams {
    /// Detuning δ (rad/s).
    pub detuning: f64,
    /// Wavevector difference Δk (1/m) projected on the transverse axis.
    pub wavevector_difference: f64,
    pub ion_mass: f64,
    /// Smallest allowed `|δ - ω_k|` (rad/s).
    pub resonance_guard: f64,
}

impl LaserParams {
    pub fn new(detuning: f64, wavevector_difference: f64, ion_mass: f64) -> Self {
        LaserParams {
            detuning,
            wavevector_difference,
            ion_mass,
            resonance_guard: units::angular(100.0),
        }
    }

    /// η_k = Δk √(ħ / (2 M ω_k)).
    pub fn lamb_dicke(&self, mode_freq: f64) -> f64 {
        self.wavevector_difference * (HBAR / (2.0 * self.ion_mass * mode_freq)).sqrt()
    }

    /// Distance from δ to the nearest mode (rad/s) and the index of that mode.
    pub fn sideband_gap(&self, modes: &ModeSpectrum) -> (f64, usize) {
        modes
            .frequencies
            .iter()
            .enumerate()
            .map(|(k, w)| ((self.detuning - w).abs(), k))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap_or((f64::INFINITY, 0))
    }

    /// Notes on Lamb-Dicke parameters outside `(0, 1)`.
    pub fn regime_warnings(&self, modes: &ModeSpectrum) -> Vec<String> {
        modes
            .frequencies
            .iter()
            .enumerate()
            .filter_map(|(k, &w)| {
                let eta = self.lamb_dicke(w);
                (!(eta > 0.0 && eta < 1.0)).then(|| format!("mode {k}: Lamb-Dicke parameter {eta:.3} outside (0, 1)"))
            })
            .collect()
    }
}

/// Gaussian intensity profile of the global beam along the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamProfile {
    /// Beam centre (m).
    pub center: f64,
    /// Full width at half maximum of the Rabi frequency (m).
    pub fwhm: f64,
    /// Ω_max (rad/s).
    pub peak_rabi: f64,
}

/// Ω_i = Ω_max exp(-4 ln2 (u_i - centre)² / fwhm²).
pub fn rabi_profile(beam: &BeamProfile, chain: &IonChain) -> Vec<f64> {
    let k = 4.0 * std::f64::consts::LN_2 / (beam.fwhm * beam.fwhm);
    chain
        .positions
        .iter()
        .map(|u| beam.peak_rabi * (-k * (u - beam.center).powi(2)).exp())
        .collect()
}

/// Symmetric, zero-diagonal Ising coupling matrix (rad/s). Positive
/// nearest-neighbour entries are antiferromagnetic.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    values: DMatrix<f64>,
}

impl CouplingMatrix {
    /// Builds from the upper triangle of `m`; the lower triangle and the
    /// diagonal are ignored.
    pub fn from_upper(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::invalid("coupling matrix must be square and nonempty"));
        }
        let n = m.nrows();
        let mut values = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid(format!("coupling ({i},{j}) is not finite")));
                }
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Ok(CouplingMatrix { values })
    }

    /// `J_ij = j0 / |i - j|^alpha`.
    pub fn power_law(n: usize, j0: f64, alpha: f64) -> Self {
        CouplingMatrix {
            values: DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    0.0
                } else {
                    j0 / (i.abs_diff(j) as f64).powf(alpha)
                }
            }),
        }
    }

    /// No couplings (a single spin or free spins).
    pub fn zeros(n: usize) -> Self {
        CouplingMatrix {
            values: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn scaled(&self, s: f64) -> Self {
        CouplingMatrix {
            values: &self.values * s,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.abs().max()
    }

    /// Upper-triangle pairs `(i, j, J_ij)` in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j, self.values[(i, j)])))
    }

    /// Writes `# N=<n>`, the column header `i,j,J_rad_per_s`, then the upper triangle.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# N={}", self.n())?;
        writeln!(out, "i,j,J_rad_per_s")?;
        for (i, j, v) in self.pairs() {
            writeln!(out, "{i},{j},{v:e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut entries = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            let bad = |m: &str| Error::MalformedData {
                line: k + 1,
                message: m.to_string(),
            };
            if t.is_empty() || t.starts_with("i,") {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("N=") {
                    n = Some(v.trim().parse().map_err(|_| bad("bad N header"))?);
                }
                continue;
            }
            let cols: Vec<&str> = t.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(bad("expected i,j,J"));
            }
            let i: usize = cols[0].parse().map_err(|_| bad("bad row index"))?;
            let j: usize = cols[1].parse().map_err(|_| bad("bad column index"))?;
            let v: f64 = cols[2].parse().map_err(|_| bad("bad coupling value"))?;
            entries.push((k + 1, i, j, v));
        }
        let n = n.ok_or(Error::MalformedData {
            line: 1,
            message: "missing '# N=' header".into(),
        })?;
        let mut m = DMatrix::zeros(n, n);
        for (line, i, j, v) in entries {
            if i >= j || j >= n {
                return Err(Error::MalformedData {
                    line,
                    message: format!("pair ({i},{j}) is not in the upper triangle of an {n}-ion matrix"),
                });
            }
            m[(i, j)] = v;
        }
        CouplingMatrix::from_upper(&m)
    }
}

/// `J_ij = Ω_i Ω_j Σ_k η_k² b_ik b_jk ω_k / (δ² - ω_k²)`, summed in mode order.
pub fn ising_couplings(rabi: &[f64], modes: &ModeSpectrum, laser: &LaserParams) -> Result<CouplingMatrix> {
    let n = modes.len();
    if rabi.len() != n {
        return Err(Error::invalid(format!("{} Rabi frequencies for {n} modes", rabi.len())));
    }
    let delta = laser.detuning;
    for (k, &w) in modes.frequencies.iter().enumerate() {
        let distance = (delta - w).abs();
        if distance < laser.resonance_guard {
            return Err(Error::NearResonance {
                mode: k,
                distance,
                guard: laser.resonance_guard,
            });
        }
    }
    let weight: Vec<f64> = modes
        .frequencies
        .iter()
        .map(|&w| {
            let eta = laser.lamb_dicke(w);
            eta * eta * w / (delta * delta - w * w)
        })
        .collect();
    let b = &modes.mode_vectors;
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for (k, wk) in weight.iter().enumerate() {
                s += wk * b[(i, k)] * b[(j, k)];
            }
            let v = rabi[i] * rabi[j] * s;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(CouplingMatrix { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignPolicy {
    /// Fit `|J_ij|` and report pairs whose sign disagrees as a warning.
    #[default]
    FitMagnitudes,
    /// Reject matrices with any sign disagreement.
    Strict,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PowerLawOptions {
    pub sign_policy: SignPolicy,
    /// Average `ln|J|` over all pairs at each distance before fitting, so
    /// each distance carries equal weight.
    pub per_distance_average: bool,
}

/// `J_ij ≈ J0 / |i - j|^α`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    /// Signed J0 (rad/s); the sign is that of the nearest-neighbour couplings.
    pub j0: f64,
    pub j0_err: f64,
    pub alpha: f64,
    pub alpha_err: f64,
    /// RMS misfit of `ln|J|`.
    pub residual: f64,
    /// Pairs fitted by magnitude although their sign disagrees with J0.
    pub sign_flipped: Vec<(usize, usize)>,
}

/// Least squares of `ln|J_ij|` against `ln|i - j|` over all pairs.
pub fn fit_power_law(j: &CouplingMatrix, opts: PowerLawOptions) -> Result<PowerLawFit> {
    let n = j.n();
    if n < 3 {
        return Err(Error::invalid("power-law fit needs at least 3 ions"));
    }
    let nn: f64 = (0..n - 1).map(|i| j.get(i, i + 1)).sum();
    let sign = if nn < 0.0 { -1.0 } else { 1.0 };
    let zero: Vec<(usize, usize)> = j.pairs().filter(|p| p.2 == 0.0).map(|p| (p.0, p.1)).collect();
    if !zero.is_empty() {
        return Err(Error::invalid(format!("{} couplings are exactly zero", zero.len())));
    }
    let flipped: Vec<(usize, usize)> = j
        .pairs()
        .filter(|p| p.2 * sign < 0.0)
        .map(|p| (p.0, p.1))
        .collect();
    if !flipped.is_empty() && opts.sign_policy == SignPolicy::Strict {
        return Err(Error::SignInconsistency(SignPairs(flipped)));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = if opts.per_distance_average {
        (1..n)
            .map(|r| {
                let mean = (0..n - r).map(|i| j.get(i, i + r).abs().ln()).sum::<f64>() / (n - r) as f64;
                ((r as f64).ln(), mean)
            })
            .unzip()
    } else {
        j.pairs()
            .map(|(a, b, v)| (((b - a) as f64).ln(), v.abs().ln()))
            .unzip()
    };
    let w = vec![1.0; x.len()];
    let line = weighted_line(&x, &y, &w)?;
    let dof = x.len().saturating_sub(2);
    let s2 = if dof > 0 { line.chi2 / dof as f64 } else { 0.0 };
    let j0 = sign * line.intercept.exp();
    Ok(PowerLawFit {
        j0,
        j0_err: j0.abs() * (s2 * line.var_intercept).sqrt(),
        alpha: -line.slope,
        alpha_err: (s2 * line.var_slope).sqrt(),
        residual: (line.chi2 / x.len() as f64).sqrt(),
        sign_flipped: flipped,
    })
}

/// `(1/(N-1)) Σ_{i≠j} 1/|i - j|^α`.
pub fn kac_norm(n: usize, alpha: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("Kac normalisation needs at least 2 ions"));
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += (i.abs_diff(j) as f64).powf(-alpha);
            }
        }
    }
    Ok(s / (n - 1) as f64)
}

/// ΔE_i = 2 Σ_{j≠i} J_ij.
pub fn spin_flip_resonances(j: &CouplingMatrix) -> Vec<f64> {
    let n = j.n();
    (0..n)
        .map(|i| 2.0 * (0..n).filter(|&k| k != i).map(|k| j.get(i, k)).sum::<f64>())
        .collect()
}

/// Order-of-magnitude phonon excitation per ion, `(η Ω / (2 δ_sb))²`
/// clamped to `[0, 1]`.
pub fn phonon_error_estimate(eta: f64, rabi: f64, sideband_gap: f64) -> Result<f64> {
    if !(sideband_gap > 0.0) {
        return Err(Error::invalid("sideband gap must be positive"));
    }
    Ok((eta * rabi / (2.0 * sideband_gap)).powi(2).clamp(0.0, 1.0))
}

/// Two readings of the phonon excitation estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhononDiagnostics {
    /// `(η Ω / 2δ_sb)²`.
    pub single_mode: f64,
    /// Same amplitude weighted by a mode-vector component `1/√N`.
    pub mode_weighted: f64,
}

pub fn phonon_error_diagnostics(eta: f64, rabi: f64, sideband_gap: f64, n: usize) -> Result<PhononDiagnostics> {
    let single_mode = phonon_error_estimate(eta, rabi, sideband_gap)?;
    Ok(PhononDiagnostics {
        single_mode,
        mode_weighted: single_mode / n.max(1) as f64,
    })
}
