use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kzm_cli::{emit_report, ingest, manifest, run_experiment, CliError, ExperimentConfig, RunManifest, RunOptions};
use kzm_core::scaling::{finite_size_extrapolation, fss_bootstrap, read_slopes_csv};

#[derive(Parser)]
#[command(name = "kzmsim", version, about = "Kibble-Zurek quench simulation and analysis for trapped-ion spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Reuse quench times already completed in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Analyse measured shot files with the sweep analysis.
    Analyze {
        /// Glob matching the shot files, e.g. 'data/shots_*.csv'.
        #[arg(long)]
        shots: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Extrapolate KZM slopes to infinite size.
    FitFss {
        /// CSV with header `N,mu,sigma_mu`.
        #[arg(long)]
        slopes: PathBuf,
        /// Gaussian bootstrap resamples of μ within σ_μ (0 disables).
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write CSV tables (and optionally SVG plots) for a manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        svg: bool,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kzmsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_summary(m: &RunManifest) {
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    for p in &m.points {
        let r = p.length().map_or("-".to_string(), |(r, _)| format!("{r:.4}"));
        println!("T={:.6e} s  |J0|T={:.4e}  rho={:.6}  R={r}", p.t_s, p.j0t, p.rho);
        for w in &p.warnings {
            eprintln!("warning (T={:.6e} s): {w}", p.t_s);
        }
    }
    if let Some(s) = &m.slope {
        match s.mu_err {
            Some(e) => println!("mu = {:.4} ± {:.4}", s.mu, e),
            None => println!("mu = {:.4}", s.mu),
        }
    }
    if let Some(t) = m.rho_tail_slope {
        println!("rho tail slope = {t:.3}");
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            config,
            seed,
            threads,
            resume,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let m = run_experiment(&cfg, &RunOptions { seed, threads, resume })?;
            print_summary(&m);
            println!("manifest: {}", cfg.output_dir.join(kzm_cli::run::MANIFEST_FILE).display());
        }
        Command::Analyze { shots, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let paths = ingest::expand_glob(&shots)?;
            let m = kzm_cli::ingest_shots(&paths, &cfg)?;
            print_summary(&m);
        }
        Command::FitFss { slopes, bootstrap, seed } => {
            let file = std::fs::File::open(&slopes).map_err(|e| CliError::io(&slopes, e))?;
            let points = read_slopes_csv(std::io::BufReader::new(file)).map_err(|e| match e {
                kzm_core::Error::MalformedData { line, message } => CliError::Malformed {
                    path: slopes.clone(),
                    line,
                    message,
                },
                other => CliError::Numerical(other),
            })?;
            let fit = finite_size_extrapolation(&points).map_err(CliError::Numerical)?;
            let mut doc = toml::Table::new();
            doc.insert(
                "fss".into(),
                toml::Value::try_from(&fit).map_err(|e| CliError::Internal(e.to_string()))?,
            );
            if bootstrap > 0 {
                let b = fss_bootstrap(&points, bootstrap, seed).map_err(CliError::Numerical)?;
                let mut t = toml::Table::new();
                t.insert("resamples".into(), (b.resamples as i64).into());
                t.insert("failures".into(), (b.failures as i64).into());
                t.insert("mu_inf_mean".into(), b.mu_inf_mean.into());
                t.insert("mu_inf_sd".into(), b.mu_inf_sd.into());
                t.insert(
                    "mu_inf_interval".into(),
                    toml::Value::Array(vec![b.mu_inf_interval.0.into(), b.mu_inf_interval.1.into()]),
                );
                doc.insert("bootstrap".into(), toml::Value::Table(t));
            }
            print!("{}", toml::to_string(&doc).map_err(|e| CliError::Internal(e.to_string()))?);
        }
        Command::Report { manifest: path, svg, out } => {
            let m = manifest::RunManifest::load(&path)?;
            let dir = out.unwrap_or_else(|| path.parent().map(PathBuf::from).unwrap_or_default());
            let report = emit_report(&m, &dir, svg)?;
            for n in &report.notices {
                eprintln!("notice: {n}");
            }
            for f in &report.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
