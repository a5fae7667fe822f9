//! Linear ion crystal: equilibrium positions, transverse normal modes and
//! inversion of a measured sideband spectrum into ion spacings.
//!
//! Positions are solved in the dimensionless coordinate `x = u / ℓ` with
//! `ℓ = (e² / (4π ε₀ M ω_z²))^(1/3)`, where the axial potential energy per
//! ion reads `x²/2 + β x⁴/4` and the Coulomb energy of a pair is `1/|x_i - x_j|`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::numerics::least_squares::{self, LmOptions, ResidualModel};
use crate::units::{self, coulomb_constant};
use crate::{Error, Result};

/// Transverse trap frequency seen by each ion.
#[derive(Debug, Clone, PartialEq)]
pub enum TransverseProfile {
    Uniform(f64),
    PerIon(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrapParams {
    pub ion_count: usize,
    /// Axial angular frequency ω_z (rad/s).
    pub axial_freq: f64,
    /// Transverse angular frequencies ω_x,i (rad/s).
    pub transverse: TransverseProfile,
    /// Ion mass (kg).
    pub ion_mass: f64,
    /// Ion charge (C).
    pub charge: f64,
    /// Dimensionless quartic coefficient β of the axial potential. Zero for a
    /// purely harmonic trap.
    pub axial_quartic: f64,
}

impl TrapParams {
    /// Harmonic trap holding `n` ¹⁷¹Yb⁺ ions, frequencies in rad/s.
    pub fn ytterbium(n: usize, axial_freq: f64, transverse_freq: f64) -> Self {
        TrapParams {
            ion_count: n,
            axial_freq,
            transverse: TransverseProfile::Uniform(transverse_freq),
            ion_mass: units::YB171_ION_MASS,
            charge: units::ELEMENTARY_CHARGE,
            axial_quartic: 0.0,
        }
    }

    pub fn transverse_freq(&self, ion: usize) -> f64 {
        match &self.transverse {
            TransverseProfile::Uniform(w) => *w,
            TransverseProfile::PerIon(v) => v[ion],
        }
    }

    /// `e² / (4π ε₀ M)` (m³/s²).
    pub fn coulomb_constant(&self) -> f64 {
        coulomb_constant(self.ion_mass, self.charge)
    }

    /// The length scale ℓ (m).
    pub fn length_scale(&self) -> f64 {
        (self.coulomb_constant() / (self.axial_freq * self.axial_freq)).cbrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ion_count == 0 {
            return Err(Error::invalid("ion count must be at least 1"));
        }
        if !(self.axial_freq > 0.0 && self.axial_freq.is_finite()) {
            return Err(Error::invalid("axial frequency must be positive"));
        }
        if !(self.ion_mass > 0.0 && self.charge != 0.0) {
            return Err(Error::invalid("ion mass and charge must be nonzero"));
        }
        if let TransverseProfile::PerIon(v) = &self.transverse {
            if v.len() != self.ion_count {
                return Err(Error::invalid(format!(
                    "transverse profile has {} entries for {} ions",
                    v.len(),
                    self.ion_count
                )));
            }
        }
        for i in 0..self.ion_count {
            if !(self.transverse_freq(i) > self.axial_freq) {
                return Err(Error::invalid(format!(
                    "transverse frequency of ion {i} must exceed the axial frequency"
                )));
            }
        }
        Ok(())
    }
}

/// Axial equilibrium configuration of the crystal.
#[derive(Debug, Clone, PartialEq)]
pub struct IonChain {
    /// Axial coordinates u_i (m), strictly increasing.
    pub positions: Vec<f64>,
    /// ℓ (m) of the trap the chain was solved in.
    pub length_scale: f64,
}

impl IonChain {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.positions.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Writes `index,position_um` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,position_um")?;
        for (i, u) in self.positions.iter().enumerate() {
            writeln!(out, "{i},{:.9}", u * 1e6)?;
        }
        Ok(())
    }
}

/// Transverse phonon modes, highest frequency first.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    /// ω_k (rad/s), sorted descending.
    pub frequencies: Vec<f64>,
    /// b_ik: column k is the normalised vector of mode k.
    pub mode_vectors: DMatrix<f64>,
}

impl ModeSpectrum {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Largest entry of `|BᵀB - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let b = &self.mode_vectors;
        let g = b.transpose() * b - DMatrix::identity(b.ncols(), b.ncols());
        g.abs().max()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EquilibriumOptions {
    pub gradient_tol: f64,
    pub max_iterations: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            gradient_tol: 1e-12,
            max_iterations: 200,
        }
    }
}

/// Equilibrium positions for `trap`, solved to a dimensionless force residual below 1e-12.
pub fn equilibrium_positions(trap: &TrapParams) -> Result<IonChain> {
    equilibrium_positions_with(trap, EquilibriumOptions::default())
}

pub fn equilibrium_positions_with(trap: &TrapParams, opts: EquilibriumOptions) -> Result<IonChain> {
    if trap.ion_count == 0 {
        return Err(Error::invalid("ion count must be at least 1"));
    }
    if !(trap.axial_freq > 0.0) {
        return Err(Error::invalid("axial frequency must be positive"));
    }
    let x = solve_dimensionless(trap.ion_count, trap.axial_quartic, opts)?;
    let ell = trap.length_scale();
    Ok(IonChain {
        positions: x.iter().map(|v| v * ell).collect(),
        length_scale: ell,
    })
}

/// Gradient of the dimensionless potential.
pub fn force_residual(x: &[f64], quartic: f64) -> Vec<f64> {
    let n = x.len();
    let mut g: Vec<f64> = x.iter().map(|&xi| xi + quartic * xi * xi * xi).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x[j] - x[i];
            let f = 1.0 / (d * d);
            g[i] += f;
            g[j] -= f;
        }
    }
    g
}

fn hessian(x: &[f64], quartic: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = 1.0 + 3.0 * quartic * x[i] * x[i];
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (x[j] - x[i]).abs();
            let c = 2.0 / (d * d * d);
            h[(i, j)] = -c;
            h[(j, i)] = -c;
            h[(i, i)] += c;
            h[(j, j)] += c;
        }
    }
    h
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// Damped Newton on the force balance, using ‖g‖ as merit: with a positive
// definite Hessian the Newton direction descends it.
fn solve_dimensionless(n: usize, quartic: f64, opts: EquilibriumOptions) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![0.0]);
    }
    let half_width = 0.6 * (n as f64).powf(0.6);
    let mut x: Vec<f64> = (0..n)
        .map(|k| -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64)
        .collect();
    let mut g = force_residual(&x, quartic);
    let mut gnorm = norm2(&g);
    for _ in 0..opts.max_iterations {
        if max_abs(&g) < opts.gradient_tol {
            return Ok(x);
        }
        let h = hessian(&x, quartic);
        let rhs = DVector::from_iterator(n, g.iter().map(|v| -v));
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => rhs,
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            if trial.windows(2).all(|w| w[1] > w[0]) {
                let gt = force_residual(&trial, quartic);
                let gn = norm2(&gt);
                if gn < gnorm {
                    x = trial;
                    g = gt;
                    gnorm = gn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if max_abs(&g) < opts.gradient_tol {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        what: "equilibrium positions",
        iterations: opts.max_iterations,
        residual: max_abs(&g),
        best: x,
    })
}

/// Transverse normal modes of `chain` in `trap`.
///
/// The Hessian is `A_ii = ω_x,i² - Σ_m k/|u_i - u_m|³`, `A_ij = k/|u_i - u_j|³`
/// with `k = e²/(4π ε₀ M)`.
pub fn transverse_modes(chain: &IonChain, trap: &TrapParams) -> Result<ModeSpectrum> {
    let n = chain.len();
    if n == 0 {
        return Err(Error::invalid("empty chain"));
    }
    if n != trap.ion_count {
        return Err(Error::invalid(format!(
            "chain has {n} ions but trap describes {}",
            trap.ion_count
        )));
    }
    if !chain.positions.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::invalid("chain positions must be strictly increasing"));
    }
    let w = |i: usize| trap.transverse_freq(i).powi(2);
    let reference = (0..n).map(w).sum::<f64>() / n as f64;
    // Work relative to the mean ω_x² in units of k/ℓ³ so that the band
    // structure is resolved to full precision.
    let ell = chain.length_scale;
    let k = trap.coulomb_constant();
    let scale = k / (ell * ell * ell);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = (w(i) - reference) / scale;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (chain.positions[j] - chain.positions[i]).abs() / ell;
            let v = 1.0 / (d * d * d);
            c[(i, j)] = v;
            c[(j, i)] = v;
            c[(i, i)] -= v;
            c[(j, j)] -= v;
        }
    }
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut frequencies = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &idx) in order.iter().enumerate() {
        let lambda = reference + scale * eig.eigenvalues[idx];
        if !(lambda > 0.0) {
            return Err(Error::StructuralInstability {
                mode: col,
                eigenvalue: lambda,
            });
        }
        frequencies.push(lambda.sqrt());
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let sum: f64 = v.iter().sum();
        let pivot = if sum.abs() > 1e-8 {
            sum
        } else {
            *v.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap()
        };
        if pivot < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }
    Ok(ModeSpectrum {
        frequencies,
        mode_vectors: vectors,
    })
}

/// How the chain is parameterised when fitting a measured spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumModel {
    /// Axial frequency and quartic axial coefficient (two parameters).
    #[default]
    AxialQuartic,
    /// Every spacing is free (`N - 1` parameters).
    RawPositions,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectrumFitOptions {
    pub model: SpectrumModel,
    /// Frequency uncertainty per mode (rad/s); residuals are divided by it.
    pub frequency_sigma: f64,
    pub lm: LmOptions,
}

impl Default for SpectrumFitOptions {
    fn default() -> Self {
        SpectrumFitOptions {
            model: SpectrumModel::AxialQuartic,
            frequency_sigma: units::angular(1e3),
            lm: LmOptions {
                tol: 1e-12,
                patience: 200,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumFit {
    pub chain: IonChain,
    /// Computed minus measured frequency for each measured mode (rad/s),
    /// highest mode first.
    pub residuals: Vec<f64>,
    pub rms_residual: f64,
    /// Fitted axial frequency (rad/s); the guess for [`SpectrumModel::RawPositions`].
    pub axial_freq: f64,
    pub axial_quartic: f64,
}

struct SpectrumProblem<'a> {
    measured: &'a [f64],
    trap: &'a TrapParams,
    model: SpectrumModel,
    sigma: f64,
    ell: f64,
}

impl SpectrumProblem<'_> {
    fn chain_for(&self, p: &[f64]) -> Result<(IonChain, TrapParams)> {
        match self.model {
            SpectrumModel::AxialQuartic => {
                let mut trap = self.trap.clone();
                trap.axial_freq = self.trap.axial_freq * p[0].exp();
                trap.axial_quartic = p[1];
                Ok((equilibrium_positions(&trap)?, trap))
            }
            SpectrumModel::RawPositions => {
                let mut u = Vec::with_capacity(p.len() + 1);
                u.push(0.0);
                for lp in p {
                    let last = *u.last().unwrap();
                    u.push(last + self.ell * lp.exp());
                }
                let mean = u.iter().sum::<f64>() / u.len() as f64;
                u.iter_mut().for_each(|v| *v -= mean);
                let chain = IonChain {
                    positions: u,
                    length_scale: self.ell,
                };
                Ok((chain, self.trap.clone()))
            }
        }
    }
}

impl ResidualModel for SpectrumProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.measured.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        let Ok((chain, trap)) = self.chain_for(p) else {
            return false;
        };
        let Ok(modes) = transverse_modes(&chain, &trap) else {
            return false;
        };
        for (k, m) in self.measured.iter().enumerate() {
            out[k] = (modes.frequencies[k] - m) / self.sigma;
        }
        true
    }
}

/// Fits the chain whose transverse spectrum best matches `measured`
/// (rad/s, any order; matched to the highest computed modes).
pub fn fit_positions_from_spectrum(
    measured: &[f64],
    trap_guess: &TrapParams,
    opts: SpectrumFitOptions,
) -> Result<SpectrumFit> {
    trap_guess.validate()?;
    let n = trap_guess.ion_count;
    if measured.is_empty() || measured.len() > n {
        return Err(Error::invalid(format!(
            "{} measured frequencies for {n} ions",
            measured.len()
        )));
    }
    if measured.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("measured frequencies must be positive"));
    }
    let mut sorted = measured.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if n == 1 {
        let chain = equilibrium_positions(trap_guess)?;
        let r = vec![trap_guess.transverse_freq(0) - sorted[0]];
        return Ok(SpectrumFit {
            rms_residual: r[0].abs(),
            residuals: r,
            chain,
            axial_freq: trap_guess.axial_freq,
            axial_quartic: trap_guess.axial_quartic,
        });
    }
    let guess_chain = equilibrium_positions(trap_guess)?;
    let ell = trap_guess.length_scale();
    let p0: Vec<f64> = match opts.model {
        SpectrumModel::AxialQuartic => vec![0.0, trap_guess.axial_quartic],
        SpectrumModel::RawPositions => guess_chain.spacings().iter().map(|s| (s / ell).ln()).collect(),
    };
    if sorted.len() < p0.len() {
        return Err(Error::Underdetermined {
            measured: sorted.len(),
            parameters: p0.len(),
        });
    }
    let problem = SpectrumProblem {
        measured: &sorted,
        trap: trap_guess,
        model: opts.model,
        sigma: opts.frequency_sigma,
        ell,
    };
    let out = least_squares::minimize(&problem, &p0, opts.lm);
    if !out.converged {
        return Err(Error::NonConvergence {
            what: "spectrum fit",
            iterations: out.evaluations,
            residual: out.cost.sqrt(),
            best: out.params,
        });
    }
    let (chain, trap) = problem.chain_for(&out.params)?;
    let residuals: Vec<f64> = out.residuals.iter().map(|r| r * opts.frequency_sigma).collect();
    let rms_residual = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(SpectrumFit {
        chain,
        residuals,
        rms_residual,
        axial_freq: trap.axial_freq,
        axial_quartic: trap.axial_quartic,
    })
}

/// Reads a measured spectrum: one ordinary frequency (Hz) per line, `#`
/// comments and blank lines ignored. Returns angular frequencies.
pub fn read_spectrum<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let hz: f64 = body.parse().map_err(|_| Error::MalformedData {
            line: k + 1,
            message: format!("not a frequency: {body:?}"),
        })?;
        if !(hz > 0.0 && hz.is_finite()) {
            return Err(Error::MalformedData {
                line: k + 1,
                message: "frequency must be positive".into(),
            });
        }
        out.push(units::angular(hz));
    }
    Ok(out)
}
