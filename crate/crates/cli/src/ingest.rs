//! Analysis of externally supplied shot files.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kzm_core::observables::Source;
use kzm_core::{Error, ShotBasis, ShotSet};

use crate::config::ExperimentConfig;
use crate::manifest::{CouplingSummary, RunManifest, Timing};
use crate::run::{analyse, summarise, MANIFEST_FILE};
use crate::CliError;

/// Expands a glob into a sorted list of files.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>, CliError> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Config(format!("shot pattern '{pattern}': {e}")))?;
    let mut out = Vec::new();
    for p in paths {
        let p = p.map_err(|e| CliError::io(e.path(), std::io::Error::other(e.to_string())))?;
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Config(format!("no shot files match '{pattern}'")));
    }
    Ok(out)
}

/// Shots plus the quench time announced by a `# T_s=<seconds>` comment.
pub fn read_shot_file(path: &Path) -> Result<(ShotSet, Option<f64>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let shots = ShotSet::read_csv(text.as_bytes()).map_err(|e| match e {
        Error::MalformedData { line, message } => CliError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => CliError::context(path.display().to_string(), other),
    })?;
    let mut t = None;
    for line in text.as_bytes().lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let Some(rest) = line.trim().strip_prefix('#') else {
            continue;
        };
        for token in rest.split_whitespace() {
            if let Some(v) = token.strip_prefix("T_s=") {
                t = Some(v.parse::<f64>().map_err(|_| CliError::Malformed {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("bad T_s value '{v}'"),
                })?);
            }
        }
    }
    Ok((shots, t))
}

/// Runs the simulated-sweep analysis on measured shot files. Quench times
/// come from each file's `T_s` comment, or else from `sweep.times_s` in
/// sorted-file order.
pub fn ingest_shots(paths: &[PathBuf], config: &ExperimentConfig) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let plan = config.resolve_for_analysis()?;
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        files.push(read_shot_file(p)?);
    }
    let Some((first, _)) = files.first() else {
        return Err(CliError::Config("no shot files given".into()));
    };
    let n = first.n();
    for (p, (s, _)) in paths.iter().zip(&files) {
        if s.n() != n {
            return Err(CliError::Config(format!(
                "{} holds {} ions, {} holds {n}",
                p.display(),
                s.n(),
                paths[0].display()
            )));
        }
        if s.basis != ShotBasis::X {
            return Err(CliError::Config(format!("{} is not an x-basis shot file", p.display())));
        }
    }
    if n != plan.coupling.matrix.n() {
        return Err(CliError::Config(format!(
            "shot files hold {n} ions but the config describes {}",
            plan.coupling.matrix.n()
        )));
    }
    let explicit = config.sweep.times_s.as_deref();
    let mut points = Vec::with_capacity(files.len());
    for (k, ((shots, t), path)) in files.iter().zip(paths).enumerate() {
        let t = match (t, explicit) {
            (Some(t), _) => *t,
            (None, Some(list)) if list.len() == files.len() => list[k],
            _ => {
                return Err(CliError::Config(format!(
                    "{} has no '# T_s=' line and sweep.times_s does not list one time per file",
                    path.display()
                )))
            }
        };
        let mut p = analyse(Source::Shots(shots), &plan, config.seed, k, t, plan.coupling.j0_magnitude * t)?;
        p.shots = Some(shots.len());
        points.push(p);
    }
    let mut manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: plan.kind,
        source: "shots".into(),
        seed: config.seed,
        threads: 1,
        warnings: plan.warnings.clone(),
        config: config.clone(),
        coupling: CouplingSummary {
            n,
            j0_rad_per_s: plan.coupling.j0_magnitude,
            alpha: plan.coupling.alpha,
        },
        schedule: None,
        points,
        slope: None,
        rho_tail_slope: None,
        calibration: None,
        timing: Timing { total_seconds: 0.0 },
    };
    summarise(&mut manifest, &plan);
    manifest.timing.total_seconds = start.elapsed().as_secs_f64();
    let out = &config.output_dir;
    manifest.save(&out.join(MANIFEST_FILE))?;
    crate::report::emit_report(&manifest, out, false)?;
    Ok(manifest)
}
