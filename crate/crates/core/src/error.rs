use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the numerical pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative method stopped without meeting its tolerance. `best`
    /// holds the best iterate seen (parameters, positions, ...).
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("unstable chain: transverse mode {mode} has eigenvalue {eigenvalue:.6e} (rad/s)^2")]
    StructuralInstability { mode: usize, eigenvalue: f64 },

    #[error("detuning within {distance:.3} rad/s of mode {mode} (guard {guard:.3} rad/s)")]
    NearResonance {
        mode: usize,
        distance: f64,
        guard: f64,
    },

    #[error("{0}")]
    SignInconsistency(SignPairs),

    #[error("underdetermined fit: {measured} measured values for {parameters} free parameters")]
    Underdetermined { measured: usize, parameters: usize },

    #[error("{spins} spins need {bytes} bytes of state memory, above the cap of {cap} spins")]
    Resource { spins: usize, cap: usize, bytes: u64 },

    #[error("step size underflow at t = {time:.6e} s (step {step:.3e} s)")]
    Stiffness { time: f64, step: f64 },

    #[error("malformed data at line {line}: {message}")]
    MalformedData { line: usize, message: String },

    /// The model cannot be identified from the data (flat or non-decaying input).
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pairs `(i, j)` whose coupling sign disagrees with the reference sign.
#[derive(Debug, Clone, PartialEq)]
pub struct SignPairs(pub Vec<(usize, usize)>);

impl fmt::Display for SignPairs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "couplings with inconsistent sign at pairs")?;
        for (i, j) in self.0.iter().take(16) {
            write!(f, " ({i},{j})")?;
        }
        if self.0.len() > 16 {
            write!(f, " ... ({} total)", self.0.len())?;
        }
        Ok(())
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
