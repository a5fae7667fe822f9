//! Physical constants (CODATA 2018) and unit helpers.

use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of a singly ionised ytterbium-171 atom (kg).
pub const YB171_ION_MASS: f64 = 170.936_331_5 * ATOMIC_MASS_UNIT - 9.109_383_701_5e-31;

/// `2π × f`: ordinary frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn angular(hz: f64) -> f64 {
    TWO_PI * hz
}

/// Angular frequency (rad/s) to ordinary frequency (Hz).
#[inline]
pub fn hertz(rad_per_s: f64) -> f64 {
    rad_per_s / TWO_PI
}

/// `e² / (4π ε₀ M)` in m³/s², the Coulomb stiffness entering the mode Hessian.
pub fn coulomb_constant(mass: f64, charge: f64) -> f64 {
    charge * charge / (4.0 * PI * VACUUM_PERMITTIVITY * mass)
}
