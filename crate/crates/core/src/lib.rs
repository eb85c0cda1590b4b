//! Simulation of magneto-inductive MIMO networks built from electrically small coils.
//!
//! The crate models wireless power downlinks and data uplinks between an external
//! coil array and micro-scale sensor nodes, including passive resonant relays and
//! cooperative transmission:
//!
//! * [`coil_models`]: equivalent circuits (L, ohmic and radiation resistance, self-capacitance).
//! * [`coupling`]: mutual impedances (retarded Neumann double integral and dipole form),
//!   antenna impedance matrices and relay elimination.
//! * [`multiport`]: cascaded impedance algebra, transfer matrices, matching synthesis.
//! * [`channel`]: power-consistent MIMO channel matrices, noise covariance and frequency sweeps.
//! * [`link`]: beamforming, waterfilling, combining and cooperative log-det rates.
//! * [`scenario`]: the biomedical setup, random swarms and Monte Carlo drivers.
//! * [`experiments`]: configuration, the canonical experiments and their CSV outputs.

// Negated comparisons such as `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod coil_models;
pub mod config;
pub mod coupling;
pub mod error;
pub mod experiments;
pub mod link;
pub mod linalg;
pub mod multiport;
pub mod quadrature;
pub mod scenario;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex;

/// Complex scalar used throughout.
pub type C64 = Complex<f64>;
/// Dense complex matrix (impedance blocks, channel and noise matrices).
pub type CMatrix = DMatrix<C64>;
/// Dense complex vector.
pub type CVector = DVector<C64>;
/// Real 3-vector for positions and axes.
pub type Vec3 = Vector3<f64>;

/// Vacuum permeability (H/m).
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Speed of light (m/s), rounded so that `mu_0 c = 120 pi` ohm exactly (λ = 40 cm at 750 MHz).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Conductivity of annealed copper (S/m).
pub const COPPER_CONDUCTIVITY: f64 = 5.8e7;

/// Angular frequency for `f` in Hz.
#[inline]
pub fn omega(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

/// Free-space wavenumber for `f` in Hz.
#[inline]
pub fn wavenumber(f: f64) -> f64 {
    omega(f) / SPEED_OF_LIGHT
}
