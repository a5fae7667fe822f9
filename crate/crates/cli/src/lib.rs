//! Orchestration for `kzmsim`: configs, sweeps, shot ingestion and reports.

pub mod config;
pub mod ingest;
pub mod manifest;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use ingest::ingest_shots;
pub use manifest::RunManifest;
pub use report::{emit_report, ReportNotice};
pub use run::{run_experiment, RunOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Numerical(kzm_core::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: kzm_core::Error,
    },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}:{line}: {message}", path.display())]
    Malformed { path: PathBuf, line: usize, message: String },

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn context(context: impl Into<String>, source: kzm_core::Error) -> Self {
        CliError::Context {
            context: context.into(),
            source,
        }
    }

    /// 2 invalid config, 3 numerical failure, 4 I/O failure.
    pub fn exit_code(&self) -> i32 {
        use kzm_core::Error as E;
        let core = |e: &E| match e {
            E::InvalidInput(_) | E::Resource { .. } => 2,
            E::Io(_) | E::MalformedData { .. } => 4,
            _ => 3,
        };
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(e) | CliError::Context { source: e, .. } => core(e),
            CliError::Io { .. } | CliError::Malformed { .. } => 4,
            CliError::Internal(_) => 3,
        }
    }
}
