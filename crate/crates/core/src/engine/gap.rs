//! Parity-sector energy gaps and the local-adiabatic field path.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::hamiltonian::{Kernel, XFrameKernel};
use super::schedule::HamiltonianSign;
use super::state::{check_size, DEFAULT_SPIN_CAP};
use crate::coupling::CouplingMatrix;
use crate::numerics::interp::{hermite, Pchip};
use crate::numerics::{gauss5, logspace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GapOptions {
    /// Ritz residual target relative to the Hamiltonian norm bound.
    pub tol: f64,
    /// Krylov basis size before a restart.
    pub max_basis: usize,
    pub max_restarts: usize,
    pub spin_cap: usize,
}

impl Default for GapOptions {
    fn default() -> Self {
        GapOptions {
            tol: 1e-10,
            max_basis: 200,
            max_restarts: 20,
            spin_cap: DEFAULT_SPIN_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    /// `E1 - E0` in the initial state's parity sector (rad/s).
    pub gap: f64,
    pub ground_energy: f64,
    /// Largest Ritz residual of the two reported levels.
    pub residual: f64,
    pub iterations: usize,
    /// The gap is below `1e-6` of the largest coupling.
    pub near_degenerate: bool,
}

/// Gap of the evolving Hamiltonian at uniform field `b`.
pub fn energy_gap(j: &CouplingMatrix, b: f64, sign: HamiltonianSign) -> Result<GapEstimate> {
    energy_gap_with(j, b, sign, &[], GapOptions::default())
}

pub fn energy_gap_with(
    j: &CouplingMatrix,
    b: f64,
    sign: HamiltonianSign,
    profile: &[f64],
    opts: GapOptions,
) -> Result<GapEstimate> {
    let n = j.n();
    check_size(n, opts.spin_cap)?;
    let kernel = XFrameKernel::new(j, profile)?;
    let threshold = 1e-6 * j.max_abs();
    if n == 1 {
        // The parity sector of one spin is a single level; use both levels ±B.
        let bi = b * profile.first().copied().unwrap_or(1.0);
        let gap = 2.0 * bi.abs();
        return Ok(GapEstimate {
            gap,
            ground_energy: -bi.abs(),
            residual: 0.0,
            iterations: 0,
            near_degenerate: gap <= threshold,
        });
    }
    let parity = sign.sector_parity(n);
    let factor = Complex64::new(sign.factor(), 0.0);
    let (e0, e1, residual, iterations) = lowest_pair(&kernel, b, factor, parity, opts)?;
    let gap = e1 - e0;
    Ok(GapEstimate {
        gap,
        ground_energy: e0,
        residual,
        iterations,
        near_degenerate: gap < threshold,
    })
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn normalize(v: &mut [Complex64]) -> f64 {
    let nrm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if nrm > 0.0 {
        for a in v.iter_mut() {
            *a /= nrm;
        }
    }
    nrm
}

fn project(kernel: &XFrameKernel, parity: f64, v: &mut [Complex64], scratch: &mut [Complex64]) {
    kernel.parity(v, scratch);
    for (a, p) in v.iter_mut().zip(scratch.iter()) {
        *a = (*a + p * parity) * 0.5;
    }
}

/// Two lowest eigenvalues of `factor·H(b)` in the parity sector, by Lanczos
/// with full reorthogonalisation.
fn lowest_pair(
    kernel: &XFrameKernel,
    b: f64,
    factor: Complex64,
    parity: f64,
    opts: GapOptions,
) -> Result<(f64, f64, f64, usize)> {
    let dim = 1usize << kernel.n();
    let sector = dim / 2;
    let scale = kernel.norm_bound(b).max(f64::MIN_POSITIVE);
    let target = opts.tol * scale;
    let breakdown = 1e-13 * scale;
    let mut scratch = vec![Complex64::default(); dim];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0067_6170);
    let mut start: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    project(kernel, parity, &mut start, &mut scratch);
    normalize(&mut start);
    let max_basis = opts.max_basis.min(sector).max(2);
    let mut total = 0usize;
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    for _ in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<Complex64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![Complex64::default(); dim];
        let mut outcome = None;
        for k in 0..max_basis {
            kernel.apply(b, factor, &basis[k], &mut w);
            project(kernel, parity, &mut w, &mut scratch);
            total += 1;
            let a = dot(&basis[k], &w).re;
            alpha.push(a);
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    for (x, y) in w.iter_mut().zip(v) {
                        *x -= c * y;
                    }
                }
            }
            let bk = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let m = alpha.len();
            let invariant = bk < breakdown;
            let last = k + 1 == max_basis;
            if m >= 2 && (invariant || last || m.is_multiple_of(4)) {
                let (vals, vecs) = tridiagonal_eigen(&alpha, &beta);
                let r0 = if invariant { 0.0 } else { bk * vecs[(m - 1, 0)].abs() };
                let r1 = if invariant { 0.0 } else { bk * vecs[(m - 1, 1)].abs() };
                let res = r0.max(r1);
                if res < best.2 {
                    best = (vals[0], vals[1], res);
                }
                if res <= target || invariant || last {
                    let done = res <= target || invariant;
                    outcome = Some((vals, vecs, res, done));
                    if done {
                        break;
                    }
                }
            }
            if invariant {
                break;
            }
            beta.push(bk);
            let next: Vec<Complex64> = w.iter().map(|x| x / bk).collect();
            basis.push(next);
        }
        match outcome {
            Some((vals, _, res, true)) => return Ok((vals[0], vals[1], res, total)),
            Some((_, vecs, _, false)) => {
                // Restart from the sum of the two lowest Ritz vectors.
                let mut next = vec![Complex64::default(); dim];
                for (c, v) in basis.iter().enumerate().take(vecs.nrows()) {
                    let coef = vecs[(c, 0)] + vecs[(c, 1)];
                    for (x, y) in next.iter_mut().zip(v) {
                        *x += y * coef;
                    }
                }
                project(kernel, parity, &mut next, &mut scratch);
                normalize(&mut next);
                start = next;
            }
            None => {
                return Err(Error::NonConvergence {
                    what: "sector Lanczos",
                    iterations: total,
                    residual: best.2,
                    best: vec![best.0, best.1],
                });
            }
        }
    }
    Err(Error::NonConvergence {
        what: "sector Lanczos",
        iterations: total,
        residual: best.2,
        best: vec![best.0, best.1],
    })
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(m, m, |i, c| eig.eigenvectors[(i, order[c])]);
    (vals, vecs)
}

/// Sector gaps tabulated over the field.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    /// Descending, ending at 0.
    pub field_grid: Vec<f64>,
    pub gaps: Vec<f64>,
}

/// Gaps on `grid_points` log-spaced fields in `[1e-3 B0, B0]` plus `B = 0`.
pub fn gap_profile(
    j: &CouplingMatrix,
    b0: f64,
    sign: HamiltonianSign,
    profile: &[f64],
    grid_points: usize,
    opts: GapOptions,
) -> Result<(GapProfile, Vec<String>)> {
    if !(b0 > 0.0 && b0.is_finite()) {
        return Err(Error::invalid("B0 must be positive"));
    }
    if grid_points < 16 {
        return Err(Error::invalid("the gap grid needs at least 16 points"));
    }
    let mut grid = logspace(1e-3 * b0, b0, grid_points);
    grid.reverse();
    grid.push(0.0);
    let estimates: Vec<Result<GapEstimate>> = grid
        .par_iter()
        .map(|&b| energy_gap_with(j, b, sign, profile, opts))
        .collect();
    let mut gaps = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    for (b, e) in grid.iter().zip(estimates) {
        let e = e?;
        if e.near_degenerate {
            warnings.push(format!("near-degenerate sector gap {:.3e} rad/s at B = {b:.3e} rad/s", e.gap));
        }
        if !(e.gap > 0.0) {
            return Err(Error::Degenerate(format!("sector gap closes at B = {b:e} rad/s")));
        }
        gaps.push(e.gap);
    }
    Ok((GapProfile { field_grid: grid, gaps }, warnings))
}

/// Normalised path `B(u)`, `u = t/T ∈ [0, 1]`, solving `dB/dt = -c Δ²(B)`.
/// Independent of `T`, so one path serves a whole sweep.
#[derive(Debug, Clone)]
pub struct LocalAdiabaticPath {
    b0: f64,
    sign: HamiltonianSign,
    field_profile: Vec<f64>,
    gaps: GapProfile,
    gap_interp: Pchip,
    /// `∫_0^{B0} dB / Δ²` (s/rad).
    adiabatic_integral: f64,
    u: Vec<f64>,
    field: Vec<f64>,
    slope: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LocalAdiabaticPath {
    pub fn build(
        j: &CouplingMatrix,
        b0: f64,
        sign: HamiltonianSign,
        field_profile: &[f64],
        grid_points: usize,
        opts: GapOptions,
    ) -> Result<Self> {
        let (gaps, warnings) = gap_profile(j, b0, sign, field_profile, grid_points, opts)?;
        Self::from_gap_profile(gaps, sign, field_profile.to_vec(), warnings)
    }

    pub fn from_gap_profile(
        gaps: GapProfile,
        sign: HamiltonianSign,
        field_profile: Vec<f64>,
        warnings: Vec<String>,
    ) -> Result<Self> {
        let mut b: Vec<f64> = gaps.field_grid.clone();
        let mut d: Vec<f64> = gaps.gaps.clone();
        b.reverse();
        d.reverse();
        if b.len() < 2 || b[0] != 0.0 || d.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::invalid("gap profile must start at B = 0 with positive gaps"));
        }
        let b0 = *b.last().unwrap();
        let interp = Pchip::new(b.clone(), d.clone());
        const SUB: usize = 16;
        let mut cumulative = vec![0.0; b.len()];
        for k in 0..b.len() - 1 {
            let h = (b[k + 1] - b[k]) / SUB as f64;
            let mut s = 0.0;
            for q in 0..SUB {
                let lo = b[k] + h * q as f64;
                s += gauss5(lo, lo + h, |x| interp.eval(x).powi(-2));
            }
            cumulative[k + 1] = cumulative[k] + s;
        }
        let total = cumulative[b.len() - 1];
        // Knots ordered by increasing u, i.e. decreasing B.
        let mut u: Vec<f64> = cumulative.iter().rev().map(|f| (total - f) / total).collect();
        u[0] = 0.0;
        *u.last_mut().unwrap() = 1.0;
        let field: Vec<f64> = b.iter().rev().copied().collect();
        let slope: Vec<f64> = d.iter().rev().map(|g| -total * g * g).collect();
        for k in 0..u.len() - 1 {
            let du = u[k + 1] - u[k];
            let secant = (field[k + 1] - field[k]) / du;
            if !(du > 0.0 && secant < 0.0) {
                return Err(Error::Consistency(format!("local-adiabatic path not monotone near knot {k}")));
            }
            let (a, c) = (slope[k] / secant, slope[k + 1] / secant);
            if a < 0.0 || c < 0.0 || a * a + c * c > 9.0 {
                return Err(Error::Consistency(format!(
                    "local-adiabatic interpolant not monotone on knot interval {k}"
                )));
            }
        }
        Ok(LocalAdiabaticPath {
            b0,
            sign,
            field_profile,
            gaps,
            gap_interp: interp,
            adiabatic_integral: total,
            u,
            field,
            slope,
            warnings,
        })
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn sign(&self) -> HamiltonianSign {
        self.sign
    }

    pub fn field_profile(&self) -> &[f64] {
        &self.field_profile
    }

    pub fn gap_profile(&self) -> &GapProfile {
        &self.gaps
    }

    pub fn adiabatic_integral(&self) -> f64 {
        self.adiabatic_integral
    }

    /// `B` at time fraction `u`, clamped into `[0, 1]`.
    pub fn field_at_fraction(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if u == 1.0 {
            return 0.0;
        }
        let k = self.u.partition_point(|&x| x <= u).clamp(1, self.u.len() - 1) - 1;
        hermite(
            self.u[k],
            self.u[k + 1],
            self.field[k],
            self.field[k + 1],
            self.slope[k],
            self.slope[k + 1],
            u,
        )
    }

    /// `dB/dt` at time fraction `u` for total time `T`.
    pub fn rate_at_fraction(&self, u: f64, total_time: f64) -> f64 {
        let d = self.gap_at(self.field_at_fraction(u));
        -self.adiabatic_integral * d * d / total_time
    }

    /// Interpolated gap at field `b`.
    pub fn gap_at(&self, b: f64) -> f64 {
        self.gap_interp.eval(b.clamp(0.0, self.b0))
    }
}

/// Builds the local-adiabatic schedule for total time `T` with a uniform field.
pub fn local_adiabatic_schedule(
    j: &CouplingMatrix,
    b0: f64,
    total_time: f64,
    grid_points: usize,
    sign: HamiltonianSign,
) -> Result<super::QuenchSchedule> {
    let path = LocalAdiabaticPath::build(j, b0, sign, &[], grid_points, GapOptions::default())?;
    super::QuenchSchedule::local_adiabatic(std::sync::Arc::new(path), total_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FM: HamiltonianSign = HamiltonianSign::Ferromagnetic;

    #[test]
    fn two_ion_gap_formula() {
        let j = CouplingMatrix::power_law(2, 1.7, 1.0);
        for b in [0.0, 0.05, 0.4, 1.0, 3.0, 10.0] {
            let g = energy_gap(&j, b, FM).unwrap();
            let expect = 2.0 * (1.7f64 * 1.7 + 4.0 * b * b).sqrt();
            assert!((g.gap / expect - 1.0).abs() < 1e-10, "b={b}: {} vs {expect}", g.gap);
        }
    }

    #[test]
    fn single_spin_gap() {
        let j = CouplingMatrix::zeros(1);
        assert_eq!(energy_gap(&j, 0.75, FM).unwrap().gap, 1.5);
    }

    #[test]
    fn larger_chain_matches_dense_sector_diagonalisation() {
        let n = 4;
        let j = CouplingMatrix::power_law(n, 1.0, 1.2);
        for sign in [FM, HamiltonianSign::Antiferromagnetic] {
            let kernel = XFrameKernel::new(&j, &[]).unwrap();
            let b = 0.6;
            let dim = 1 << n;
            let mut h = DMatrix::<Complex64>::zeros(dim, dim);
            let mut out = vec![Complex64::default(); dim];
            let p = sign.sector_parity(n);
            let mut scratch = vec![Complex64::default(); dim];
            // Sector basis: projected unit vectors, orthonormalised.
            let mut basis: Vec<Vec<Complex64>> = Vec::new();
            for k in 0..dim {
                let mut e = vec![Complex64::default(); dim];
                e[k] = Complex64::new(1.0, 0.0);
                project(&kernel, p, &mut e, &mut scratch);
                for v in &basis {
                    let c = dot(v, &e);
                    for (x, y) in e.iter_mut().zip(v) {
                        *x -= c * y;
                    }
                }
                if normalize(&mut e) > 1e-8 {
                    basis.push(e);
                }
            }
            assert_eq!(basis.len(), dim / 2);
            let m = basis.len();
            for c in 0..m {
                kernel.apply(b, Complex64::new(sign.factor(), 0.0), &basis[c], &mut out);
                for r in 0..m {
                    h[(r, c)] = dot(&basis[r], &out);
                }
            }
            let h = h.view((0, 0), (m, m)).into_owned();
            let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let g = energy_gap(&j, b, sign).unwrap();
            assert!((g.gap - (ev[1] - ev[0])).abs() < 1e-10);
        }
    }

    #[test]
    fn local_adiabatic_path_endpoints_and_rate() {
        let j = CouplingMatrix::power_law(2, 1.0, 1.0);
        let s = local_adiabatic_schedule(&j, 6.0, 10.0, 64, FM).unwrap();
        assert!((s.value(0.0).unwrap() - 6.0).abs() < 1e-9 * 6.0);
        assert!(s.value(10.0).unwrap().abs() < 1e-9 * 6.0);
        let mut prev = f64::INFINITY;
        for k in 0..=400 {
            let b = s.value(10.0 * k as f64 / 400.0).unwrap();
            assert!(b <= prev);
            prev = b;
        }
        if let crate::engine::ScheduleKind::LocalAdiabatic(path) = &s.kind {
            let near_zero = path.rate_at_fraction(0.999, 10.0).abs();
            let start = path.rate_at_fraction(0.0, 10.0).abs();
            assert!(near_zero < start);
        } else {
            unreachable!();
        }
    }

    #[test]
    fn small_grids_are_rejected() {
        let j = CouplingMatrix::power_law(2, 1.0, 1.0);
        assert!(local_adiabatic_schedule(&j, 6.0, 1.0, 8, FM).is_err());
    }
}
