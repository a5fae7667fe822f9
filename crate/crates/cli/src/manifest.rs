use std::io::Write;
use std::path::Path;

use kzm_core::{CorrLengthFit, CorrelationProfile, PowerLawFit, SlopeFit};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::CliError;

/// Everything needed to reproduce and report one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub kind: ExperimentKind,
    /// `simulation` or `shots`.
    pub source: String,
    pub seed: u64,
    pub threads: usize,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
    pub coupling: CouplingSummary,
    pub schedule: Option<ScheduleSummary>,
    pub points: Vec<PointResult>,
    pub slope: Option<SlopeFit>,
    /// Log-log slope of ρ over the largest decade of |J0|T.
    pub rho_tail_slope: Option<f64>,
    pub calibration: Option<CalibrationSummary>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub n: usize,
    /// |J0| (rad/s) used to scale quench times.
    pub j0_rad_per_s: f64,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub kind: String,
    pub protocol: String,
    pub b0_rad_per_s: f64,
    pub tau_fraction: Option<f64>,
}

/// Results at one quench time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub index: usize,
    pub t_s: f64,
    pub j0t: f64,
    pub rho: f64,
    pub rho_err: f64,
    pub shots: Option<usize>,
    pub norm_drift: Option<f64>,
    pub accepted_steps: Option<usize>,
    pub rejected_steps: Option<usize>,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
    /// Why no correlation length was reported, when it was not.
    pub corr_fit_error: Option<String>,
    pub profile: Option<CorrelationProfile>,
    pub corr_fit: Option<CorrLengthFit>,
}

impl PointResult {
    /// `(R, σ_R)` when the fit produced a resolved length.
    pub fn length(&self) -> Option<(f64, Option<f64>)> {
        self.corr_fit.as_ref().filter(|f| !f.unresolved).map(|f| (f.r, f.r_err))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub positions_um: Vec<f64>,
    pub mode_frequencies_hz: Vec<f64>,
    pub rabi_rad_per_s: Vec<f64>,
    pub detuning_rad_per_s: f64,
    pub spectrum_rms_hz: Option<f64>,
    pub kac_norm: Option<f64>,
    pub resonances_hz: Vec<f64>,
    pub phonon_single_mode: f64,
    pub phonon_mode_weighted: f64,
    pub power_law: Option<PowerLawRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawRecord {
    pub j0_rad_per_s: f64,
    pub j0_err: f64,
    pub alpha: f64,
    pub alpha_err: f64,
    pub residual: f64,
    pub sign_flipped: Vec<(usize, usize)>,
}

impl From<&PowerLawFit> for PowerLawRecord {
    fn from(f: &PowerLawFit) -> Self {
        PowerLawRecord {
            j0_rad_per_s: f.j0,
            j0_err: f.j0_err,
            alpha: f.alpha,
            alpha_err: f.alpha_err,
            residual: f.residual,
            sign_flipped: f.sign_flipped.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Internal(format!("manifest serialisation: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self.to_toml()?.as_bytes())
    }
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}
