use std::sync::Arc;

use super::gap::LocalAdiabaticPath;
use super::state::SpinDirection;
use crate::{Error, Result};

/// Which Hamiltonian the state evolves under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianSign {
    /// `-H` from `|↑y…↑y⟩`.
    Ferromagnetic,
    /// `+H` from `|↓y…↓y⟩`.
    Antiferromagnetic,
}

impl HamiltonianSign {
    /// Multiplier on `H`.
    pub fn factor(self) -> f64 {
        match self {
            HamiltonianSign::Ferromagnetic => -1.0,
            HamiltonianSign::Antiferromagnetic => 1.0,
        }
    }

    pub fn initial_direction(self) -> SpinDirection {
        match self {
            HamiltonianSign::Ferromagnetic => SpinDirection::UpY,
            HamiltonianSign::Antiferromagnetic => SpinDirection::DownY,
        }
    }

    /// Eigenvalue of `⊗σy` on the protocol's initial state.
    pub fn sector_parity(self, n: usize) -> f64 {
        match self {
            HamiltonianSign::Ferromagnetic => 1.0,
            HamiltonianSign::Antiferromagnetic if n % 2 == 1 => -1.0,
            HamiltonianSign::Antiferromagnetic => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ScheduleKind {
    /// `B0 (1 - t/T)`.
    Linear,
    /// `B0 [exp(-t/τ) - exp(-T/τ)]`.
    Exponential { tau: f64 },
    /// Rate proportional to the squared gap along a precomputed path.
    LocalAdiabatic(Arc<LocalAdiabaticPath>),
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Exponential { .. } => "exponential",
            ScheduleKind::LocalAdiabatic(_) => "local_adiabatic",
        }
    }
}

/// Field ramp `B(t)` on `[0, T]` together with the protocol sign.
/// `B_i(t) = B(t) · field_profile[i]`; an empty profile is uniform.
#[derive(Debug, Clone)]
pub struct QuenchSchedule {
    pub kind: ScheduleKind,
    pub b0: f64,
    pub total_time: f64,
    pub field_profile: Vec<f64>,
    pub sign: HamiltonianSign,
}

impl QuenchSchedule {
    pub fn linear(b0: f64, total_time: f64, sign: HamiltonianSign) -> Result<Self> {
        QuenchSchedule {
            kind: ScheduleKind::Linear,
            b0,
            total_time,
            field_profile: Vec::new(),
            sign,
        }
        .validated()
    }

    /// `tau` defaults to `T/5`.
    pub fn exponential(b0: f64, total_time: f64, tau: Option<f64>, sign: HamiltonianSign) -> Result<Self> {
        QuenchSchedule {
            kind: ScheduleKind::Exponential {
                tau: tau.unwrap_or(total_time / 5.0),
            },
            b0,
            total_time,
            field_profile: Vec::new(),
            sign,
        }
        .validated()
    }

    /// Runs `path` over a total time `T`; field, profile and sign come from the path.
    pub fn local_adiabatic(path: Arc<LocalAdiabaticPath>, total_time: f64) -> Result<Self> {
        QuenchSchedule {
            b0: path.b0(),
            field_profile: path.field_profile().to_vec(),
            sign: path.sign(),
            kind: ScheduleKind::LocalAdiabatic(path),
            total_time,
        }
        .validated()
    }

    pub fn with_field_profile(mut self, profile: Vec<f64>) -> Result<Self> {
        if let ScheduleKind::LocalAdiabatic(p) = &self.kind {
            if p.field_profile() != profile.as_slice() {
                return Err(Error::invalid("a local-adiabatic path fixes its own field profile"));
            }
        }
        self.field_profile = profile;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        if !(self.b0 > 0.0 && self.b0.is_finite()) {
            return Err(Error::invalid("B0 must be positive"));
        }
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(Error::invalid("quench time must be positive"));
        }
        if let ScheduleKind::Exponential { tau } = self.kind {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::invalid("exponential time constant must be positive"));
            }
        }
        if self.field_profile.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("field profile must be finite"));
        }
        Ok(self)
    }

    /// `B(t)` for `t ∈ [0, T]`.
    pub fn value(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.total_time).contains(&t) {
            return Err(Error::invalid(format!(
                "time {t} outside [0, {}]",
                self.total_time
            )));
        }
        Ok(self.field_at(t))
    }

    /// `B(t)` with `t` clamped into `[0, T]`.
    pub(crate) fn field_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.total_time);
        let tt = self.total_time;
        match &self.kind {
            ScheduleKind::Linear => {
                if t == tt {
                    0.0
                } else {
                    self.b0 * (1.0 - t / tt)
                }
            }
            ScheduleKind::Exponential { tau } => self.b0 * ((-t / tau).exp() - (-tt / tau).exp()),
            ScheduleKind::LocalAdiabatic(path) => path.field_at_fraction(t / tt),
        }
    }
}
