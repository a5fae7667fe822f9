//! Adaptive Dormand-Prince 5(4) propagation of `i dψ/dt = ±H(t) ψ`.

use num_complex::Complex64;
use rayon::prelude::*;

use super::hamiltonian::{Kernel, XFrameKernel, ZBasisKernel, CHUNK, PARALLEL_THRESHOLD};
use super::schedule::QuenchSchedule;
use super::state::{check_size, SpinState, DEFAULT_SPIN_CAP};
use crate::coupling::CouplingMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    #[default]
    XFrame,
    ZBasis,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Local error target: the 2-norm of the embedded error estimate per step.
    pub tol: f64,
    /// Largest change of `‖ψ‖²` allowed over the whole run; each step gets
    /// its share in proportion to its length.
    pub norm_budget: f64,
    pub kernel: KernelChoice,
    pub max_steps: usize,
    pub spin_cap: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            tol: 1e-9,
            norm_budget: 1e-8,
            kernel: KernelChoice::XFrame,
            max_steps: 100_000_000,
            spin_cap: DEFAULT_SPIN_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvolveStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub evaluations: usize,
    /// Largest `|‖ψ‖ - 1|` seen at a snapshot.
    pub max_norm_drift: f64,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    /// `(t, ψ(t))` in ascending time.
    pub snapshots: Vec<(f64, SpinState)>,
    pub stats: EvolveStats,
}

impl Evolution {
    pub fn final_state(&self) -> &SpinState {
        &self.snapshots.last().expect("at least one snapshot").1
    }
}

/// States at `snapshot_times` (sorted, duplicates merged; empty means `[T]`).
pub fn evolve(
    initial: &SpinState,
    j: &CouplingMatrix,
    schedule: &QuenchSchedule,
    tol: f64,
    snapshot_times: &[f64],
) -> Result<Vec<(f64, SpinState)>> {
    let opts = EvolveOptions {
        tol,
        ..Default::default()
    };
    Ok(evolve_with(initial, j, schedule, snapshot_times, opts)?.snapshots)
}

pub fn evolve_with(
    initial: &SpinState,
    j: &CouplingMatrix,
    schedule: &QuenchSchedule,
    snapshot_times: &[f64],
    opts: EvolveOptions,
) -> Result<Evolution> {
    let n = initial.n();
    if j.n() != n {
        return Err(Error::invalid(format!("{n}-spin state with {}-spin couplings", j.n())));
    }
    check_size(n, opts.spin_cap)?;
    if !(1e-12..=1e-6).contains(&opts.tol) {
        return Err(Error::invalid("integrator tolerance must lie in [1e-12, 1e-6]"));
    }
    let tt = schedule.total_time;
    let mut times: Vec<f64> = if snapshot_times.is_empty() {
        vec![tt]
    } else {
        snapshot_times.to_vec()
    };
    if let Some(t) = times.iter().find(|t| !(0.0..=tt).contains(*t)) {
        return Err(Error::invalid(format!("snapshot time {t} outside [0, {tt}]")));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    match opts.kernel {
        KernelChoice::XFrame => {
            let k = XFrameKernel::new(j, &schedule.field_profile)?;
            integrate(&k, initial, schedule, &times, opts)
        }
        KernelChoice::ZBasis => {
            let k = ZBasisKernel::new(j, &schedule.field_profile)?;
            integrate(&k, initial, schedule, &times, opts)
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// `out = base + h Σ c_k v_k`, elementwise; deterministic for any thread count.
fn combine(out: &mut [Complex64], base: &[Complex64], h: f64, terms: &[(f64, &[Complex64])]) {
    let body = |offset: usize, chunk: &mut [Complex64]| {
        let len = chunk.len();
        chunk.copy_from_slice(&base[offset..offset + len]);
        for &(c, v) in terms {
            if c == 0.0 {
                continue;
            }
            let w = c * h;
            for (o, x) in chunk.iter_mut().zip(&v[offset..offset + len]) {
                o.re += w * x.re;
                o.im += w * x.im;
            }
        }
    };
    if out.len() < PARALLEL_THRESHOLD {
        body(0, out);
    } else {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| body(c * CHUNK, chunk));
    }
}

/// `(h ‖Σ e_k k_k‖₂, ‖y‖₂²)`, using `scratch` for the error vector. Partial
/// sums are taken over fixed chunks so the result does not depend on thread
/// count.
fn error_and_norm(h: f64, ks: &[Vec<Complex64>], y: &[Complex64], scratch: &mut [Complex64]) -> (f64, f64) {
    let terms: Vec<(f64, &[Complex64])> = E.iter().zip(ks).map(|(w, k)| (*w, k.as_slice())).collect();
    let len = scratch.len();
    let body = |offset: usize, chunk: &mut [Complex64]| -> (f64, f64) {
        let n = chunk.len();
        chunk.fill(Complex64::default());
        for &(c, v) in &terms {
            if c == 0.0 {
                continue;
            }
            for (o, x) in chunk.iter_mut().zip(&v[offset..offset + n]) {
                o.re += c * x.re;
                o.im += c * x.im;
            }
        }
        let e: f64 = chunk.iter().map(|e| e.norm_sqr()).sum();
        let w: f64 = y[offset..offset + n].iter().map(|a| a.norm_sqr()).sum();
        (e, w)
    };
    let (e, w) = if len < PARALLEL_THRESHOLD {
        body(0, scratch)
    } else {
        let parts: Vec<(f64, f64)> = scratch
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(c, chunk)| body(c * CHUNK, chunk))
            .collect();
        parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1))
    };
    (h * e.sqrt(), w)
}

fn integrate<K: Kernel>(
    kernel: &K,
    initial: &SpinState,
    schedule: &QuenchSchedule,
    times: &[f64],
    opts: EvolveOptions,
) -> Result<Evolution> {
    let dim = initial.amplitudes().len();
    let tt = schedule.total_time;
    let factor = Complex64::new(0.0, -schedule.sign.factor());
    let mut y = initial.amplitudes().to_vec();
    kernel.enter_frame(&mut y);
    let mut ks: Vec<Vec<Complex64>> = (0..7).map(|_| vec![Complex64::default(); dim]).collect();
    let mut stage = vec![Complex64::default(); dim];
    let mut scratch = vec![Complex64::default(); dim];
    let mut stats = EvolveStats::default();
    let mut snapshots = Vec::with_capacity(times.len());
    let snapshot = |y: &[Complex64], t: f64, stats: &mut EvolveStats| -> Result<(f64, SpinState)> {
        let mut z = y.to_vec();
        kernel.leave_frame(&mut z);
        let s = SpinState::from_amplitudes(initial.n(), z)?;
        stats.max_norm_drift = stats.max_norm_drift.max((s.norm() - 1.0).abs());
        Ok((t, s))
    };

    let mut t = 0.0;
    let mut current_norm_sq: f64 = y.iter().map(|a| a.norm_sqr()).sum();
    let bound = kernel.norm_bound(schedule.b0).max(f64::MIN_POSITIVE);
    let mut h = (opts.tol.powf(0.2) / bound).min(tt);
    kernel.apply(schedule.field_at(0.0), factor, &y, &mut ks[0]);
    stats.evaluations += 1;
    for &target in times {
        while t < target {
            if stats.accepted_steps + stats.rejected_steps >= opts.max_steps {
                return Err(Error::NonConvergence {
                    what: "time integration",
                    iterations: opts.max_steps,
                    residual: f64::NAN,
                    best: vec![t],
                });
            }
            let remaining = target - t;
            let landing = h >= remaining * (1.0 - 1e-12);
            let step = if landing { remaining } else { h };
            if step <= 1e-14 * tt.max(t) && !landing {
                return Err(Error::Stiffness { time: t, step });
            }
            for s in 1..7 {
                let terms: Vec<(f64, &[Complex64])> =
                    A[s].iter().zip(ks.iter()).map(|(a, k)| (*a, k.as_slice())).collect();
                combine(&mut stage, &y, step, &terms);
                let (_, rest) = ks.split_at_mut(s);
                let b = schedule.field_at(t + C[s] * step);
                kernel.apply(b, factor, &stage, &mut rest[0]);
                stats.evaluations += 1;
            }
            // Stage 7 input (the fifth-order solution) is stored in `stage`.
            let (local, norm_sq) = error_and_norm(step, &ks, &stage, &mut scratch);
            // Norm loss scales as h^6 per step; map it onto the h^5 error scale.
            let allowed = opts.norm_budget * step / tt;
            let drift = (norm_sq - current_norm_sq).abs() / allowed;
            let err = (local / opts.tol).max(drift.powf(5.0 / 6.0));
            if err <= 1.0 {
                t = if landing { target } else { t + step };
                std::mem::swap(&mut y, &mut stage);
                current_norm_sq = norm_sq;
                ks.swap(0, 6);
                stats.accepted_steps += 1;
            } else {
                stats.rejected_steps += 1;
            }
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            let proposal = step * if err <= 1.0 { grow } else { grow.min(1.0) };
            // A step shortened to land on a snapshot does not shrink the next one.
            h = if landing && err <= 1.0 { proposal.max(h) } else { proposal };
        }
        snapshots.push(snapshot(&y, target, &mut stats)?);
    }
    Ok(Evolution { snapshots, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{initial_state, HamiltonianSign, SpinDirection};

    const FM: HamiltonianSign = HamiltonianSign::Ferromagnetic;

    #[test]
    fn static_field_single_spin_precesses() {
        // −H = −B σy leaves |↑y⟩ invariant up to phase.
        let j = CouplingMatrix::zeros(1);
        let s = QuenchSchedule::linear(1.0, 2.0, FM).unwrap();
        let psi = initial_state(1, SpinDirection::UpY).unwrap();
        let out = evolve(&psi, &j, &s, 1e-10, &[]).unwrap();
        assert!((out[0].1.fidelity(&psi) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pure_coupling_phase_is_exact() {
        // −J σxσx on |↑z↑z⟩ for time T mixes into |↓z↓z⟩ with amplitude i sin(JT).
        let jv = 0.7;
        let j = CouplingMatrix::power_law(2, jv, 1.0);
        let s = QuenchSchedule::linear(1e-300, 1.5, FM).unwrap();
        let mut amps = vec![Complex64::default(); 4];
        amps[0] = Complex64::new(1.0, 0.0);
        let psi = SpinState::from_amplitudes(2, amps).unwrap();
        let got = evolve(&psi, &j, &s, 1e-11, &[]).unwrap().pop().unwrap().1;
        let a = got.amplitudes();
        assert!((a[0] - Complex64::new((jv * 1.5).cos(), 0.0)).norm() < 1e-9);
        assert!((a[3] - Complex64::new(0.0, (jv * 1.5).sin())).norm() < 1e-9);
    }

    #[test]
    fn kernels_give_the_same_evolution() {
        let n = 4;
        let j = CouplingMatrix::power_law(n, 1.0, 1.1);
        let s = QuenchSchedule::exponential(5.0, 3.0, None, FM).unwrap();
        let psi = initial_state(n, SpinDirection::UpY).unwrap();
        let run = |kernel| {
            let o = EvolveOptions {
                tol: 1e-11,
                kernel,
                ..Default::default()
            };
            evolve_with(&psi, &j, &s, &[], o).unwrap()
        };
        let a = run(KernelChoice::XFrame);
        let b = run(KernelChoice::ZBasis);
        let diff = a
            .final_state()
            .amplitudes()
            .iter()
            .zip(b.final_state().amplitudes())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-11, "{diff}");
    }

    #[test]
    fn snapshot_validation() {
        let j = CouplingMatrix::power_law(2, 1.0, 1.0);
        let s = QuenchSchedule::linear(1.0, 1.0, FM).unwrap();
        let psi = initial_state(2, SpinDirection::UpY).unwrap();
        assert!(evolve(&psi, &j, &s, 1e-9, &[1.5]).is_err());
        assert!(evolve(&psi, &j, &s, 1e-3, &[]).is_err());
        let out = evolve(&psi, &j, &s, 1e-9, &[0.5, 0.0, 0.5, 1.0]).unwrap();
        let t: Vec<f64> = out.iter().map(|x| x.0).collect();
        assert_eq!(t, vec![0.0, 0.5, 1.0]);
        assert_eq!(out[0].1, psi);
    }
}
