//! Experiment configuration, schema version 1.
//!
//! Parsing is strict: unknown keys are rejected so typos cannot silently
//! fall back to defaults. [`ExperimentConfig::resolve`] fills the per-kind
//! defaults and validates everything the run needs up front.

use std::path::{Path, PathBuf};

use kzm_core::chain::{
    equilibrium_positions, fit_positions_from_spectrum, read_spectrum, transverse_modes, SpectrumFitOptions,
    SpectrumModel, TransverseProfile,
};
use kzm_core::coupling::{fit_power_law, ising_couplings, rabi_profile, PowerLawOptions, SignPolicy};
use kzm_core::engine::{DEFAULT_SPIN_CAP, HARD_SPIN_CAP};
use kzm_core::units::{TWO_PI, YB171_ION_MASS};
use kzm_core::{BeamProfile, CouplingMatrix, HamiltonianSign, IonChain, LaserParams, ModeSpectrum, PowerLawFit, TrapParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TwoIonLocalAdiabatic,
    KzmSweep,
    AfmSweep,
    Calibration,
}

impl ExperimentKind {
    pub fn sign(self) -> HamiltonianSign {
        match self {
            ExperimentKind::AfmSweep => HamiltonianSign::Antiferromagnetic,
            _ => HamiltonianSign::Ferromagnetic,
        }
    }
}

/// How frequencies in the file are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnit {
    /// Ordinary frequency; multiplied by 2π on load.
    Hz,
    RadPerS,
}

impl FrequencyUnit {
    pub fn to_angular(self, v: f64) -> f64 {
        match self {
            FrequencyUnit::Hz => TWO_PI * v,
            FrequencyUnit::RadPerS => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub frequency_unit: FrequencyUnit,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub numerics: NumericsSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("kzm_output")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub power_law: Option<PowerLawSection>,
    pub trap: Option<TrapSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawSection {
    pub n: usize,
    /// Signed; only the magnitude enters the dynamics.
    pub j0: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    pub n: usize,
    pub axial: f64,
    pub transverse: f64,
    /// Per-ion transverse frequencies; overrides `transverse` when present.
    pub transverse_profile: Option<Vec<f64>>,
    #[serde(default)]
    pub axial_quartic: f64,
    /// Measured transverse spectrum (one value per line, Hz) to fit the
    /// chain against instead of trusting `axial`.
    pub spectrum_file: Option<PathBuf>,
    pub spectrum_model: Option<SpectrumModelName>,
    pub laser: LaserSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumModelName {
    AxialQuartic,
    RawPositions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserSection {
    /// Detuning above the highest transverse mode.
    pub detuning_offset: Option<f64>,
    /// Absolute detuning; alternative to `detuning_offset`.
    pub detuning: Option<f64>,
    pub peak_rabi: f64,
    /// 1/m; defaults to counter-propagating 355 nm beams at 90°.
    pub wavevector_difference: Option<f64>,
    pub beam_fwhm_um: Option<f64>,
    #[serde(default)]
    pub beam_center_um: f64,
    pub resonance_guard: Option<f64>,
    #[serde(default)]
    pub strict_signs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Linear,
    Exponential,
    LocalAdiabatic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: Option<ScheduleName>,
    /// Initial field in units of |J0|.
    pub b0: Option<f64>,
    /// τ/T for the exponential path.
    pub tau_fraction: Option<f64>,
    pub gap_grid_points: Option<usize>,
    /// Relative per-ion field amplitudes.
    pub field_profile: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit quench times (s); overrides the range.
    pub times_s: Option<Vec<f64>>,
    /// `[lo, hi]` in units of |J0| T.
    pub j0t_range: Option<[f64; 2]>,
    pub points_per_decade: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    #[default]
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    #[serde(default)]
    pub mode: MeasurementMode,
    pub shots: Option<usize>,
    pub flip_prob: Option<f64>,
    /// Write the sampled shot files next to the manifest.
    #[serde(default)]
    pub write_shots: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub edge_discard: Option<usize>,
    pub bootstrap_resamples: Option<usize>,
    /// Inclusive distance window `[r_lo, r_hi]` for the correlation-length fit.
    pub fit_range: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub tolerance: Option<f64>,
    pub norm_budget: Option<f64>,
    pub spin_cap: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative spectrum files are resolved against the config's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(trap) = cfg.coupling.trap.as_mut() {
            if let Some(f) = trap.spectrum_file.as_mut() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Validates the config and fills per-kind defaults.
    pub fn resolve(&self) -> Result<Plan, CliError> {
        self.resolve_inner(true)
    }

    /// Like [`resolve`](Self::resolve) without the state-vector size limit,
    /// for analysing externally measured shots.
    pub fn resolve_for_analysis(&self) -> Result<Plan, CliError> {
        self.resolve_inner(false)
    }

    fn resolve_inner(&self, simulate: bool) -> Result<Plan, CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let mut warnings = Vec::new();
        let kind = self.kind;
        let unit = self.frequency_unit;
        let sign = kind.sign();

        let coupling = match (&self.coupling.power_law, &self.coupling.trap) {
            (Some(_), Some(_)) => return bad("give exactly one of [coupling.power_law] and [coupling.trap]".into()),
            (None, Some(t)) => self.resolve_trap(t, &mut warnings)?,
            (Some(p), None) => {
                if kind == ExperimentKind::Calibration {
                    return bad("calibration needs [coupling.trap]".into());
                }
                resolve_power_law(p.n, unit.to_angular(p.j0), p.alpha)?
            }
            (None, None) => match kind {
                ExperimentKind::TwoIonLocalAdiabatic => resolve_power_law(2, TWO_PI * -450.0, 1.0)?,
                ExperimentKind::KzmSweep => resolve_power_law(13, TWO_PI * 153.0, 1.19)?,
                ExperimentKind::AfmSweep => resolve_power_law(13, TWO_PI * 67.0, 1.05)?,
                ExperimentKind::Calibration => return bad("calibration needs [coupling.trap]".into()),
            },
        };
        if kind == ExperimentKind::TwoIonLocalAdiabatic && coupling.matrix.n() != 2 {
            return bad(format!("two_ion_local_adiabatic needs N = 2, got {}", coupling.matrix.n()));
        }
        let j0 = coupling.j0_magnitude;
        if !(j0 > 0.0) || !j0.is_finite() {
            return bad(format!("|J0| must be positive and finite, got {j0}"));
        }

        let schedule = ScheduleName::resolve(&self.schedule, kind);
        let b0 = self.schedule.b0.unwrap_or(match kind {
            ExperimentKind::TwoIonLocalAdiabatic => 6.0,
            _ => 42.5,
        });
        if !(b0 > 0.0) || !b0.is_finite() {
            return bad(format!("schedule.b0 must be positive, got {b0}"));
        }
        if b0 < 1.0 {
            warnings.push(format!("B0 = {b0}|J0| < |J0|: the initial state is far from the ground state"));
        }
        let tau_fraction = self.schedule.tau_fraction.unwrap_or(0.2);
        if !(tau_fraction > 0.0) {
            return bad("schedule.tau_fraction must be positive".into());
        }
        let gap_grid_points = self.schedule.gap_grid_points.unwrap_or(64);
        let n = coupling.matrix.n();
        let field_profile = self.schedule.field_profile.clone().unwrap_or_default();
        if !field_profile.is_empty() && field_profile.len() != n {
            return bad(format!("schedule.field_profile has {} entries for {n} ions", field_profile.len()));
        }

        let times = if kind == ExperimentKind::Calibration {
            Vec::new()
        } else {
            self.sweep.times(kind, j0)?
        };

        let spin_cap = self.numerics.spin_cap.unwrap_or(DEFAULT_SPIN_CAP);
        if spin_cap > HARD_SPIN_CAP {
            return bad(format!("numerics.spin_cap {spin_cap} exceeds the hard cap of {HARD_SPIN_CAP}"));
        }
        if simulate && kind != ExperimentKind::Calibration && n > spin_cap {
            return bad(format!(
                "{n} spins need {} bytes of state memory, above the cap of {spin_cap} spins",
                kzm_core::engine::state_bytes(n)
            ));
        }
        let tolerance = self.numerics.tolerance.unwrap_or(1e-9);
        if !(1e-12..=1e-6).contains(&tolerance) {
            return bad(format!("numerics.tolerance {tolerance:e} outside [1e-12, 1e-6]"));
        }
        let norm_budget = self.numerics.norm_budget.unwrap_or(1e-8);
        if !(norm_budget > 0.0) {
            return bad("numerics.norm_budget must be positive".into());
        }

        let sampling = match self.measurement.mode {
            MeasurementMode::Exact => None,
            MeasurementMode::Sampled => {
                let shots = self.measurement.shots.unwrap_or(1000);
                let flip_prob = self.measurement.flip_prob.unwrap_or(0.0);
                if shots == 0 || !(0.0..=0.5).contains(&flip_prob) {
                    return bad("sampled measurement needs shots ≥ 1 and flip_prob in [0, 0.5]".into());
                }
                if n > 64 {
                    return bad("shot records hold at most 64 ions".into());
                }
                Some(Sampling { shots, flip_prob })
            }
        };

        if let Some([lo, hi]) = self.analysis.fit_range {
            if lo < 1 || hi < lo {
                return bad(format!("analysis.fit_range [{lo}, {hi}] must satisfy 1 ≤ lo ≤ hi"));
            }
        }

        Ok(Plan {
            kind,
            sign,
            coupling,
            schedule,
            b0: b0 * j0,
            tau_fraction,
            gap_grid_points,
            field_profile,
            times,
            sampling,
            edge_discard: self.analysis.edge_discard,
            bootstrap_resamples: self.analysis.bootstrap_resamples.unwrap_or(200),
            fit_range: self.analysis.fit_range.map(|[a, b]| (a, b)),
            tolerance,
            norm_budget,
            spin_cap,
            write_shots: self.measurement.write_shots,
            warnings,
        })
    }

    fn resolve_trap(&self, t: &TrapSection, warnings: &mut Vec<String>) -> Result<ResolvedCoupling, CliError> {
        let unit = self.frequency_unit;
        let mut trap = TrapParams::ytterbium(t.n, unit.to_angular(t.axial), unit.to_angular(t.transverse));
        if let Some(p) = &t.transverse_profile {
            trap.transverse = TransverseProfile::PerIon(p.iter().map(|v| unit.to_angular(*v)).collect());
        }
        trap.axial_quartic = t.axial_quartic;
        let (chain, spectrum_rms) = match &t.spectrum_file {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                let measured = read_spectrum(std::io::BufReader::new(file)).map_err(CliError::Numerical)?;
                let opts = SpectrumFitOptions {
                    model: match t.spectrum_model.unwrap_or(SpectrumModelName::AxialQuartic) {
                        SpectrumModelName::AxialQuartic => SpectrumModel::AxialQuartic,
                        SpectrumModelName::RawPositions => SpectrumModel::RawPositions,
                    },
                    ..Default::default()
                };
                let fit = fit_positions_from_spectrum(&measured, &trap, opts).map_err(CliError::Numerical)?;
                trap.axial_freq = fit.axial_freq;
                trap.axial_quartic = fit.axial_quartic;
                (fit.chain, Some(fit.rms_residual))
            }
            None => (equilibrium_positions(&trap).map_err(CliError::Numerical)?, None),
        };
        let modes = transverse_modes(&chain, &trap).map_err(CliError::Numerical)?;
        let l = &t.laser;
        let detuning = match (l.detuning, l.detuning_offset) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give one of laser.detuning and laser.detuning_offset".into()))
            }
            (Some(d), None) => unit.to_angular(d),
            (None, Some(o)) => modes.frequencies[0] + unit.to_angular(o),
            (None, None) => return Err(CliError::Config("laser needs detuning or detuning_offset".into())),
        };
        let dk = l
            .wavevector_difference
            .unwrap_or(2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI / 355e-9);
        let mut laser = LaserParams::new(detuning, dk, YB171_ION_MASS);
        if let Some(g) = l.resonance_guard {
            laser.resonance_guard = unit.to_angular(g);
        }
        warnings.extend(laser.regime_warnings(&modes));
        let peak = unit.to_angular(l.peak_rabi);
        let rabi = match l.beam_fwhm_um {
            Some(fwhm) => rabi_profile(
                &BeamProfile {
                    center: l.beam_center_um * 1e-6,
                    fwhm: fwhm * 1e-6,
                    peak_rabi: peak,
                },
                &chain,
            ),
            None => vec![peak; t.n],
        };
        let matrix = ising_couplings(&rabi, &modes, &laser).map_err(CliError::Numerical)?;
        let power_law = if t.n >= 3 {
            let opts = PowerLawOptions {
                sign_policy: if l.strict_signs { SignPolicy::Strict } else { SignPolicy::FitMagnitudes },
                per_distance_average: false,
            };
            let fit = fit_power_law(&matrix, opts).map_err(CliError::Numerical)?;
            if !fit.sign_flipped.is_empty() {
                warnings.push(format!("{} pair couplings fitted by magnitude despite a sign flip", fit.sign_flipped.len()));
            }
            Some(fit)
        } else {
            None
        };
        let signed = match &power_law {
            Some(f) => f.j0,
            None if t.n == 2 => matrix.get(0, 1),
            None => 0.0,
        };
        Ok(ResolvedCoupling {
            j0_magnitude: if t.n == 1 { 1.0 } else { signed.abs() },
            signed_j0: Some(signed),
            // The engine takes the AFM-positive matrix; FM runs flip the sign of H.
            matrix: if signed < 0.0 { matrix.scaled(-1.0) } else { matrix },
            alpha: power_law.as_ref().map(|f| f.alpha),
            calibration: Some(Calibration {
                trap,
                chain,
                modes,
                laser,
                rabi,
                power_law,
                spectrum_rms,
            }),
        })
    }
}

fn resolve_power_law(n: usize, j0: f64, alpha: f64) -> Result<ResolvedCoupling, CliError> {
    if n < 2 || !j0.is_finite() || !alpha.is_finite() {
        return Err(CliError::Config(format!(
            "power-law coupling needs N ≥ 2 and finite J0, α (got N={n}, J0={j0}, α={alpha})"
        )));
    }
    Ok(ResolvedCoupling {
        matrix: CouplingMatrix::power_law(n, j0.abs(), alpha),
        j0_magnitude: j0.abs(),
        signed_j0: Some(j0),
        alpha: Some(alpha),
        calibration: None,
    })
}

impl ScheduleName {
    fn resolve(s: &ScheduleSection, kind: ExperimentKind) -> Self {
        s.kind.unwrap_or(match kind {
            ExperimentKind::TwoIonLocalAdiabatic => ScheduleName::LocalAdiabatic,
            _ => ScheduleName::Exponential,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            ScheduleName::Linear => "linear",
            ScheduleName::Exponential => "exponential",
            ScheduleName::LocalAdiabatic => "local_adiabatic",
        }
    }
}

impl SweepSection {
    fn times(&self, kind: ExperimentKind, j0: f64) -> Result<Vec<f64>, CliError> {
        if let Some(t) = &self.times_s {
            if t.is_empty() || t.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(CliError::Config("sweep.times_s must be a nonempty list of positive times".into()));
            }
            return Ok(t.clone());
        }
        let [lo, hi] = self.j0t_range.unwrap_or(match kind {
            ExperimentKind::TwoIonLocalAdiabatic => [1e-3, 1e2],
            ExperimentKind::AfmSweep => [4e-3 * j0, 20e-3 * j0],
            _ => [1.0, 10.0],
        });
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(CliError::Config(format!("sweep.j0t_range [{lo}, {hi}] must satisfy 0 < lo ≤ hi")));
        }
        let ppd = self.points_per_decade.unwrap_or(8);
        if ppd == 0 {
            return Err(CliError::Config("sweep.points_per_decade must be ≥ 1".into()));
        }
        Ok(log_grid(lo, hi, ppd).into_iter().map(|x| x / j0).collect())
    }
}

/// `ppd` points per decade from `lo` to `hi`, both endpoints included.
pub fn log_grid(lo: f64, hi: f64, ppd: usize) -> Vec<f64> {
    if hi == lo {
        return vec![lo];
    }
    let decades = (hi / lo).log10();
    let steps = ((decades * ppd as f64).round() as usize).max(1);
    (0..=steps)
        .map(|k| {
            if k == steps {
                hi
            } else {
                lo * (hi / lo).powf(k as f64 / steps as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Sampling {
    pub shots: usize,
    pub flip_prob: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub trap: TrapParams,
    pub chain: IonChain,
    pub modes: ModeSpectrum,
    pub laser: LaserParams,
    pub rabi: Vec<f64>,
    pub power_law: Option<PowerLawFit>,
    /// RMS frequency misfit when the chain was fitted to a measured spectrum.
    pub spectrum_rms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ResolvedCoupling {
    /// Lab-frame couplings with the nearest-neighbour sign made positive.
    pub matrix: CouplingMatrix,
    pub j0_magnitude: f64,
    pub signed_j0: Option<f64>,
    pub alpha: Option<f64>,
    pub calibration: Option<Calibration>,
}

/// A validated config with every default filled in.
#[derive(Debug, Clone)]
pub struct Plan {
    pub kind: ExperimentKind,
    pub sign: HamiltonianSign,
    pub coupling: ResolvedCoupling,
    pub schedule: ScheduleName,
    /// Absolute initial field (rad/s).
    pub b0: f64,
    pub tau_fraction: f64,
    pub gap_grid_points: usize,
    pub field_profile: Vec<f64>,
    pub times: Vec<f64>,
    pub sampling: Option<Sampling>,
    pub edge_discard: Option<usize>,
    pub bootstrap_resamples: usize,
    pub fit_range: Option<(usize, usize)>,
    pub tolerance: f64,
    pub norm_budget: f64,
    pub spin_cap: usize,
    pub write_shots: bool,
    pub warnings: Vec<String>,
}
