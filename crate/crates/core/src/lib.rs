//! Simulation and analysis toolkit for Kibble-Zurek quenches of the
//! long-range transverse-field Ising model realised on a trapped-ion chain.
//!
//! The crate follows the physical pipeline end to end:
//!
//! * [`chain`]: equilibrium positions and transverse phonon modes of a linear
//!   ion crystal, and inversion of a measured sideband spectrum.
//! * [`coupling`]: the laser-induced Ising couplings `J_ij`, their power-law
//!   summary and calibration-side predictions.
//! * [`engine`]: state-vector evolution under quench schedules, energy gaps
//!   and the local-adiabatic path.
//! * [`observables`]: defect density, connected correlations, correlation
//!   lengths and a readout-error shot model.
//! * [`scaling`]: the Kibble-Zurek slope and the finite-size extrapolation.
//!
//! All frequencies are angular (rad/s) unless a name says otherwise.

pub mod chain;
pub mod coupling;
pub mod engine;
mod error;
pub mod numerics;
pub mod observables;
pub mod scaling;
pub mod units;

pub use error::{Error, Result};

pub use chain::{IonChain, ModeSpectrum, TrapParams};
pub use coupling::{BeamProfile, CouplingMatrix, LaserParams, PowerLawFit};
pub use engine::{HamiltonianSign, QuenchSchedule, ScheduleKind, SpinDirection, SpinState};
pub use observables::{CorrLengthFit, CorrelationProfile, MeasurementModel, ShotBasis, ShotSet};
pub use scaling::{FssFit, ScalingPoint, SlopeEstimate, SlopeFit};


