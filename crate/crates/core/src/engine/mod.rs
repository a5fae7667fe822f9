//! State-vector dynamics of the transverse-field Ising chain.
//!
//! The lab-frame Hamiltonian is `H = Σ_{i<j} J_ij σx^i σx^j + Σ_i B_i σy^i`.
//! A [`HamiltonianSign`] selects the protocol: ferromagnetic runs evolve
//! `|↑y…↑y⟩` under `-H`, antiferromagnetic runs evolve `|↓y…↓y⟩` under `+H`.
//! Both start near the ground state of the evolving Hamiltonian at large `B`.

mod evolve;
mod gap;
pub mod hamiltonian;
mod schedule;
mod state;

pub use evolve::{evolve, evolve_with, EvolveOptions, EvolveStats, Evolution, KernelChoice};
pub use gap::{
    energy_gap, energy_gap_with, gap_profile, local_adiabatic_schedule, GapEstimate, GapOptions, GapProfile,
    LocalAdiabaticPath,
};
pub use schedule::{HamiltonianSign, QuenchSchedule, ScheduleKind};
pub use state::{
    check_size, initial_state, initial_state_with_cap, state_bytes, SpinDirection, SpinState, DEFAULT_SPIN_CAP,
    HARD_SPIN_CAP,
};

use crate::coupling::CouplingMatrix;
use crate::Result;

/// Where the couplings come from: an explicit matrix or `J0/|i-j|^α`.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    Matrix(CouplingMatrix),
    PowerLaw { n: usize, j0: f64, alpha: f64 },
}

impl CouplingSpec {
    pub fn to_matrix(&self) -> Result<CouplingMatrix> {
        match self {
            CouplingSpec::Matrix(m) => Ok(m.clone()),
            &CouplingSpec::PowerLaw { n, j0, alpha } => {
                if n == 0 || !j0.is_finite() || !alpha.is_finite() {
                    return Err(crate::Error::invalid("power-law couplings need N ≥ 1 and finite J0, α"));
                }
                Ok(CouplingMatrix::power_law(n, j0, alpha))
            }
        }
    }
}
