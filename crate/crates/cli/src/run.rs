//! Sweep orchestration: one independent evolution per quench time.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use kzm_core::coupling::{kac_norm, phonon_error_diagnostics, spin_flip_resonances};
use kzm_core::engine::{evolve_with, initial_state_with_cap, EvolveOptions, GapOptions, LocalAdiabaticPath};
use kzm_core::numerics::regression::weighted_line;
use kzm_core::observables::{
    correlation_profile_with, defect_density, edge_discard_for, fit_correlation_length_with, sample_measurements,
    CorrLengthOptions, ProfileOptions, Source,
};
use kzm_core::scaling::fit_kzm_slope;
use kzm_core::units::TWO_PI;
use kzm_core::{HamiltonianSign, MeasurementModel, QuenchSchedule, ScalingPoint, ShotBasis, ShotSet, SlopeFit};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, Plan, ScheduleName};
use crate::manifest::{
    write_atomic, CalibrationSummary, CouplingSummary, PointResult, PowerLawRecord, RunManifest, ScheduleSummary,
    Timing,
};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub resume: bool,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
const POINTS_DIR: &str = "points";
const SWEEP_ECHO: &str = "sweep_config.toml";

/// Seed for quench time `k`: a SplitMix64 step, so nearby indices decorrelate.
pub fn point_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let mut config = config.clone();
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    let plan = config.resolve()?;
    let threads = opts.threads.unwrap_or_else(rayon::current_num_threads).max(1);
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let mut manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: plan.kind,
        source: "simulation".into(),
        seed: config.seed,
        threads,
        warnings: plan.warnings.clone(),
        config: config.clone(),
        coupling: coupling_summary(&plan),
        schedule: None,
        points: Vec::new(),
        slope: None,
        rho_tail_slope: None,
        calibration: None,
        timing: Timing { total_seconds: 0.0 },
    };

    if plan.kind == ExperimentKind::Calibration {
        manifest.calibration = Some(calibrate(&plan, &out)?);
    } else {
        manifest.schedule = Some(schedule_summary(&plan));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
        let (points, warnings) = pool.install(|| sweep(&plan, &config, &out, opts.resume))?;
        manifest.warnings.extend(warnings);
        manifest.points = points;
        summarise(&mut manifest, &plan);
    }
    manifest.timing.total_seconds = start.elapsed().as_secs_f64();
    manifest.save(&out.join(MANIFEST_FILE))?;
    crate::report::emit_report(&manifest, &out, false)?;
    Ok(manifest)
}

fn coupling_summary(plan: &Plan) -> CouplingSummary {
    CouplingSummary {
        n: plan.coupling.matrix.n(),
        j0_rad_per_s: plan.coupling.j0_magnitude,
        alpha: plan.coupling.alpha,
    }
}

fn schedule_summary(plan: &Plan) -> ScheduleSummary {
    ScheduleSummary {
        kind: plan.schedule.label().into(),
        protocol: match plan.sign {
            HamiltonianSign::Ferromagnetic => "ferromagnetic",
            HamiltonianSign::Antiferromagnetic => "antiferromagnetic",
        }
        .into(),
        b0_rad_per_s: plan.b0,
        tau_fraction: (plan.schedule == ScheduleName::Exponential).then_some(plan.tau_fraction),
    }
}

fn sweep(plan: &Plan, config: &ExperimentConfig, out: &Path, resume: bool) -> Result<(Vec<PointResult>, Vec<String>), CliError> {
    let points_dir = out.join(POINTS_DIR);
    std::fs::create_dir_all(&points_dir).map_err(|e| CliError::io(&points_dir, e))?;
    let echo_path = points_dir.join(SWEEP_ECHO);
    let echo = config.to_toml();
    let mut done: Vec<Option<PointResult>> = vec![None; plan.times.len()];
    if resume && echo_path.exists() {
        let previous = std::fs::read_to_string(&echo_path).map_err(|e| CliError::io(&echo_path, e))?;
        if previous != echo {
            return Err(CliError::Config(format!(
                "--resume: {} was produced by a different config",
                points_dir.display()
            )));
        }
        for (k, slot) in done.iter_mut().enumerate() {
            let p = point_path(&points_dir, k);
            if let Ok(text) = std::fs::read_to_string(&p) {
                let point: PointResult =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                if point.t_s.to_bits() == plan.times[k].to_bits() {
                    *slot = Some(point);
                }
            }
        }
    } else {
        for k in 0..plan.times.len() {
            let p = point_path(&points_dir, k);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
    }
    write_atomic(&echo_path, echo.as_bytes())?;

    let mut warnings = Vec::new();
    let path = match plan.schedule {
        ScheduleName::LocalAdiabatic => {
            let gap_opts = GapOptions {
                spin_cap: plan.spin_cap,
                ..Default::default()
            };
            let p = LocalAdiabaticPath::build(
                &plan.coupling.matrix,
                plan.b0,
                plan.sign,
                &plan.field_profile,
                plan.gap_grid_points,
                gap_opts,
            )
            .map_err(|e| CliError::context("local-adiabatic path", e))?;
            warnings.extend(p.warnings.iter().cloned());
            Some(Arc::new(p))
        }
        _ => None,
    };

    let pending: Vec<usize> = (0..plan.times.len()).filter(|&k| done[k].is_none()).collect();
    let fresh: Vec<PointResult> = pending
        .par_iter()
        .map(|&k| {
            let point = run_point(plan, config.seed, k, path.as_ref(), out)?;
            let text = toml::to_string(&point).map_err(|e| CliError::Internal(e.to_string()))?;
            write_atomic(&point_path(&points_dir, k), text.as_bytes())?;
            Ok(point)
        })
        .collect::<Result<_, CliError>>()?;
    for p in fresh {
        let k = p.index;
        done[k] = Some(p);
    }
    Ok((done.into_iter().map(|p| p.expect("every point ran")).collect(), warnings))
}

fn point_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("point_{k:04}.toml"))
}

pub fn shot_path(out: &Path, k: usize) -> PathBuf {
    out.join("shots").join(format!("shots_{k:04}.csv"))
}

fn run_point(
    plan: &Plan,
    seed: u64,
    k: usize,
    path: Option<&Arc<LocalAdiabaticPath>>,
    out: &Path,
) -> Result<PointResult, CliError> {
    let start = Instant::now();
    let t = plan.times[k];
    let ctx = |e| CliError::context(format!("T = {t:e} s"), e);
    let schedule = match plan.schedule {
        ScheduleName::Linear => QuenchSchedule::linear(plan.b0, t, plan.sign),
        ScheduleName::Exponential => QuenchSchedule::exponential(plan.b0, t, Some(plan.tau_fraction * t), plan.sign),
        ScheduleName::LocalAdiabatic => QuenchSchedule::local_adiabatic(path.expect("path built").clone(), t),
    }
    .map_err(ctx)?;
    let schedule = match plan.schedule {
        ScheduleName::LocalAdiabatic => schedule,
        _ if plan.field_profile.is_empty() => schedule,
        _ => schedule.with_field_profile(plan.field_profile.clone()).map_err(ctx)?,
    };
    let n = plan.coupling.matrix.n();
    let psi0 = initial_state_with_cap(n, plan.sign.initial_direction(), plan.spin_cap).map_err(ctx)?;
    let opts = EvolveOptions {
        tol: plan.tolerance,
        norm_budget: plan.norm_budget,
        spin_cap: plan.spin_cap,
        ..Default::default()
    };
    let evo = evolve_with(&psi0, &plan.coupling.matrix, &schedule, &[t], opts).map_err(ctx)?;
    let psi = evo.final_state();
    let j0t = plan.coupling.j0_magnitude * t;

    let mut point = match &plan.sampling {
        None => analyse(Source::State(psi), plan, seed, k, t, j0t)?,
        Some(s) => {
            let model = MeasurementModel {
                shots: s.shots,
                flip_prob: s.flip_prob,
                rng_seed: point_seed(seed, k),
            };
            let shots = sample_measurements(psi, ShotBasis::X, &model).map_err(ctx)?;
            if plan.write_shots {
                write_shots(&shot_path(out, k), &shots, t, j0t)?;
            }
            let mut p = analyse(Source::Shots(&shots), plan, seed, k, t, j0t)?;
            p.shots = Some(s.shots);
            p
        }
    };
    point.norm_drift = Some(evo.stats.max_norm_drift);
    point.accepted_steps = Some(evo.stats.accepted_steps);
    point.rejected_steps = Some(evo.stats.rejected_steps);
    point.wall_seconds = start.elapsed().as_secs_f64();
    Ok(point)
}

/// Shot file with an extra `# T_s=` line so it can be ingested on its own.
pub fn write_shots(path: &Path, shots: &ShotSet, t: f64, j0t: f64) -> Result<(), CliError> {
    let mut body = Vec::new();
    shots.write_csv(&mut body).map_err(|e| CliError::io(path, e))?;
    let split = body.iter().position(|&b| b == b'\n').map_or(body.len(), |p| p + 1);
    let mut bytes = body[..split].to_vec();
    bytes.extend_from_slice(format!("# T_s={t:e} J0T={j0t:e}\n").as_bytes());
    bytes.extend_from_slice(&body[split..]);
    write_atomic(path, &bytes)
}

/// ρ, G(r) and the correlation-length fit for one state or shot set.
pub(crate) fn analyse(source: Source<'_>, plan: &Plan, seed: u64, k: usize, t: f64, j0t: f64) -> Result<PointResult, CliError> {
    let ctx = |e| CliError::context(format!("T = {t:e} s"), e);
    let n = source.n();
    let rho = defect_density(source).map_err(ctx)?;
    let mut point = PointResult {
        index: k,
        t_s: t,
        j0t,
        rho: rho.rho,
        rho_err: rho.stderr,
        shots: None,
        norm_drift: None,
        accepted_steps: None,
        rejected_steps: None,
        wall_seconds: 0.0,
        warnings: Vec::new(),
        corr_fit_error: None,
        profile: None,
        corr_fit: None,
    };
    if n < 3 {
        return Ok(point);
    }
    let opts = ProfileOptions {
        edge_discard: plan.edge_discard.unwrap_or_else(|| edge_discard_for(n)),
        bootstrap_resamples: plan.bootstrap_resamples,
        bootstrap_seed: point_seed(seed ^ 0xb007, k),
        ..ProfileOptions::with_discard(0)
    };
    let profile = match correlation_profile_with(source, opts) {
        Ok(p) => p,
        Err(e) => {
            point.corr_fit_error = Some(e.to_string());
            return Ok(point);
        }
    };
    let fit_opts = CorrLengthOptions {
        r_range: plan.fit_range,
        ..Default::default()
    };
    match fit_correlation_length_with(&profile, fit_opts) {
        Ok(f) => {
            if f.unresolved {
                point.warnings.push(format!("correlation length {:.3} unresolved by the profile", f.r));
            }
            point.corr_fit = Some(f);
        }
        Err(e) => point.corr_fit_error = Some(e.to_string()),
    }
    point.profile = Some(profile);
    Ok(point)
}

/// Sweep-level fits: the KZM slope and, for ρ sweeps, the tail exponent.
pub(crate) fn summarise(manifest: &mut RunManifest, plan: &Plan) {
    let n = plan.coupling.matrix.n();
    let lengths: Vec<ScalingPoint> = manifest
        .points
        .iter()
        .filter_map(|p| {
            p.length().map(|(r, r_err)| ScalingPoint {
                n,
                j0t: p.j0t,
                r,
                r_err: r_err.filter(|e| *e > 0.0),
            })
        })
        .collect();
    let lengths = if lengths.iter().all(|p| p.r_err.is_some()) {
        lengths
    } else {
        lengths.into_iter().map(|p| ScalingPoint { r_err: None, ..p }).collect()
    };
    if lengths.len() >= 2 {
        match fit_kzm_slope(&lengths) {
            Ok(f) => manifest.slope = Some(f),
            Err(e) => manifest.warnings.push(format!("no KZM slope: {e}")),
        }
    } else if n >= 3 && manifest.points.len() >= 2 {
        manifest
            .warnings
            .push(format!("no KZM slope: {} resolved correlation lengths", lengths.len()));
    }
    manifest.rho_tail_slope = rho_tail_slope(&manifest.points);
}

fn rho_tail_slope(points: &[PointResult]) -> Option<f64> {
    let top = points.iter().map(|p| p.j0t).fold(f64::NAN, f64::max);
    let tail: Vec<&PointResult> = points.iter().filter(|p| p.j0t >= top / 10.0 && p.rho > 0.0).collect();
    if tail.len() < 3 {
        return None;
    }
    let x: Vec<f64> = tail.iter().map(|p| p.j0t.ln()).collect();
    let y: Vec<f64> = tail.iter().map(|p| p.rho.ln()).collect();
    weighted_line(&x, &y, &vec![1.0; x.len()]).ok().map(|f| f.slope)
}

pub(crate) fn slope_row(fit: &SlopeFit) -> (f64, f64) {
    (fit.mu, fit.mu_err.unwrap_or(f64::NAN))
}

fn calibrate(plan: &Plan, out: &Path) -> Result<CalibrationSummary, CliError> {
    let cal = plan.coupling.calibration.as_ref().expect("calibration needs a trap");
    let j = &plan.coupling.matrix;
    let n = j.n();
    let mut positions = Vec::new();
    cal.chain.write_csv(&mut positions).map_err(|e| CliError::io(out, e))?;
    write_atomic(&out.join("positions.csv"), &positions)?;
    let mut couplings = Vec::new();
    let signed = if plan.coupling.signed_j0.is_some_and(|s| s < 0.0) { j.scaled(-1.0) } else { j.clone() };
    signed.write_csv(&mut couplings).map_err(|e| CliError::io(out, e))?;
    write_atomic(&out.join("couplings.csv"), &couplings)?;

    let (gap, k) = cal.laser.sideband_gap(&cal.modes);
    let peak = cal.rabi.iter().cloned().fold(0.0, f64::max);
    let eta = cal.laser.lamb_dicke(cal.modes.frequencies[k]);
    let phonon = phonon_error_diagnostics(eta, peak, gap, n).map_err(CliError::Numerical)?;
    Ok(CalibrationSummary {
        positions_um: cal.chain.positions.iter().map(|u| u * 1e6).collect(),
        mode_frequencies_hz: cal.modes.frequencies.iter().map(|w| w / TWO_PI).collect(),
        rabi_rad_per_s: cal.rabi.clone(),
        detuning_rad_per_s: cal.laser.detuning,
        spectrum_rms_hz: cal.spectrum_rms.map(|r| r / TWO_PI),
        kac_norm: plan.coupling.alpha.and_then(|a| kac_norm(n, a).ok()),
        resonances_hz: spin_flip_resonances(&signed).iter().map(|e| e / TWO_PI).collect(),
        phonon_single_mode: phonon.single_mode,
        phonon_mode_weighted: phonon.mode_weighted,
        power_law: cal.power_law.as_ref().map(PowerLawRecord::from),
    })
}
