//! Physical constants (exact SI values) and small unit helpers.

use std::f64::consts::PI;

/// Elementary charge (C).
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649e-23;

/// Angular frequency from an ordinary frequency in Hz.
pub fn angular(freq_hz: f64) -> f64 {
    2.0 * PI * freq_hz
}

/// Ordinary frequency in Hz from an angular frequency.
pub fn hertz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Energy corresponding to `hbar * 2 pi f`.
pub fn energy_from_hz(freq_hz: f64) -> f64 {
    HBAR * angular(freq_hz)
}
