//! Equivalent-circuit parameters of single-turn loops and single-layer solenoids.
//!
//! A coil is described by its geometry ([`CoilGeometry`]) and reduced, at a given
//! frequency, to the series R-L branch shunted by a self-capacitance
//! ([`CoilCircuit`]):
//!
//! * inductance: circular-loop formula `mu a (ln(8a/r_w) - 2)` for single turns; for
//!   solenoids the Lorenz current-sheet inductance (Nagaoka coefficient from complete
//!   elliptic integrals) minus Rosa's round-wire correction
//!   `mu a N (A + B)`, `A = 5/4 - ln(2p/d)`, `B` the mutual-inductance correction series;
//! * ohmic resistance: DC resistance times a skin-effect factor
//!   (`r_w/(2 delta) + 1/4` for `r_w/delta > 4`, linear blend to 1 below) and a
//!   tabulated proximity-effect multiplier;
//! * radiation resistance: `(1/3) mu k^3 f nu^2 S^2`;
//! * self-capacitance: Medhurst's empirical fit for solenoids, a fixed 0.1 pF per metre
//!   of circumference for single-turn loops.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quadrature::elliptic_ke;
use crate::{omega, wavenumber, Vec3, C64, COPPER_CONDUCTIVITY, MU_0};

/// Stray capacitance assigned to single-turn loops, per metre of circumference.
pub const LOOP_STRAY_CAPACITANCE_PER_M: f64 = 0.1e-12;

/// Physical description of one coil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilGeometry {
    /// Centre position (m).
    pub center: [f64; 3],
    /// Unit axis.
    pub axis: [f64; 3],
    pub turns: u32,
    /// Radius of the wire centre line (m).
    pub loop_radius: f64,
    /// Winding height (m); zero for flat loops. Always `turns * pitch` for solenoids.
    pub solenoid_height: f64,
    pub wire_radius: f64,
    /// Centre-to-centre turn pitch in wire diameters.
    pub turn_spacing_factor: f64,
    /// Wire conductivity (S/m).
    pub material_conductivity: f64,
}

impl CoilGeometry {
    /// Flat single-turn copper loop.
    pub fn single_turn(center: Vec3, axis: Vec3, loop_radius: f64, wire_radius: f64) -> Self {
        Self {
            center: center.into(),
            axis: axis.normalize().into(),
            turns: 1,
            loop_radius,
            solenoid_height: 0.0,
            wire_radius,
            turn_spacing_factor: 1.0,
            material_conductivity: COPPER_CONDUCTIVITY,
        }
    }

    /// Single-layer copper solenoid whose height equals its size (former diameter).
    ///
    /// The wire diameter follows from fitting `turns` turns at the given pitch into the
    /// height; the wire centre line sits one wire radius outside the former.
    pub fn sensor_solenoid(center: Vec3, axis: Vec3, size: f64, turns: u32, spacing: f64) -> Self {
        let wire_radius = size / (2.0 * turns as f64 * spacing);
        let pitch = 2.0 * wire_radius * spacing;
        Self {
            center: center.into(),
            axis: axis.normalize().into(),
            turns,
            loop_radius: 0.5 * size + wire_radius,
            solenoid_height: if turns > 1 { turns as f64 * pitch } else { 0.0 },
            wire_radius,
            turn_spacing_factor: spacing,
            material_conductivity: COPPER_CONDUCTIVITY,
        }
    }

    /// Same coil moved to a new pose.
    pub fn with_pose(&self, center: Vec3, axis: Vec3) -> Self {
        Self {
            center: center.into(),
            axis: axis.normalize().into(),
            ..self.clone()
        }
    }

    /// Same coil with every length multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            center: (self.center_vec() * s).into(),
            loop_radius: self.loop_radius * s,
            solenoid_height: self.solenoid_height * s,
            wire_radius: self.wire_radius * s,
            ..self.clone()
        }
    }

    pub fn center_vec(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn axis_vec(&self) -> Vec3 {
        Vec3::from(self.axis)
    }

    pub fn is_solenoid(&self) -> bool {
        self.turns > 1
    }

    /// Turn pitch (m).
    pub fn pitch(&self) -> f64 {
        2.0 * self.wire_radius * self.turn_spacing_factor
    }

    /// Winding height derived from turns and pitch (m).
    pub fn height(&self) -> f64 {
        if self.is_solenoid() {
            self.turns as f64 * self.pitch()
        } else {
            0.0
        }
    }

    /// Area enclosed by one turn (m²).
    pub fn area(&self) -> f64 {
        PI * self.loop_radius * self.loop_radius
    }

    /// Length of the helical (or circular) wire path.
    pub fn wire_length(&self) -> f64 {
        let circumference = 2.0 * PI * self.loop_radius;
        if self.is_solenoid() {
            self.turns as f64 * circumference.hypot(self.pitch())
        } else {
            circumference
        }
    }

    /// Largest outer extent across the coil, used for integral/dipole switching.
    pub fn diameter(&self) -> f64 {
        2.0 * (self.loop_radius + self.wire_radius)
    }

    pub fn validate(&self) -> Result<()> {
        let axis_norm = self.axis_vec().norm();
        if (axis_norm - 1.0).abs() > 1e-12 {
            return domain(format!("coil axis must be a unit vector (|axis| = {axis_norm})"));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return domain("coil centre must be finite");
        }
        if self.turns == 0 {
            return domain("coil needs at least one turn");
        }
        if !(self.wire_radius > 0.0) {
            return domain(format!("wire radius must be positive (got {})", self.wire_radius));
        }
        if !(self.loop_radius > self.wire_radius) {
            return domain(format!(
                "loop radius {} must exceed wire radius {}",
                self.loop_radius, self.wire_radius
            ));
        }
        if !(self.material_conductivity > 0.0) {
            return domain("conductivity must be positive");
        }
        if self.is_solenoid() {
            if !(self.turn_spacing_factor >= 1.0) {
                return domain(format!(
                    "turn spacing factor {} < 1 makes adjacent turns overlap",
                    self.turn_spacing_factor
                ));
            }
            let h = self.height();
            if (self.solenoid_height - h).abs() > 1e-6 * h {
                return domain(format!(
                    "solenoid height {} inconsistent with turns x pitch = {}",
                    self.solenoid_height, h
                ));
            }
        } else if self.solenoid_height != 0.0 {
            return domain("single-turn loops have zero height");
        }
        Ok(())
    }
}

/// Equivalent-circuit parameters at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilCircuit {
    pub inductance: f64,
    pub ohmic_resistance: f64,
    pub radiation_resistance: f64,
    pub self_capacitance: f64,
    pub frequency: f64,
}

impl CoilCircuit {
    pub fn evaluate(geom: &CoilGeometry, f: f64) -> Result<Self> {
        geom.validate()?;
        Ok(Self {
            inductance: solenoid_inductance(geom)?,
            ohmic_resistance: ohmic_resistance(geom, f)?,
            radiation_resistance: radiation_resistance(f, geom.turns, geom.area())?,
            self_capacitance: self_capacitance(geom)?,
            frequency: f,
        })
    }

    /// Total loss resistance `R_ohm + R_rad`.
    pub fn resistance(&self) -> f64 {
        self.ohmic_resistance + self.radiation_resistance
    }

    /// Series branch `R + j omega L` (without self-capacitance).
    pub fn series_impedance(&self) -> C64 {
        C64::new(self.resistance(), omega(self.frequency) * self.inductance)
    }

    /// Terminal impedance: series branch in parallel with the self-capacitance.
    pub fn port_impedance(&self) -> C64 {
        let z = self.series_impedance();
        let y = z.inv() + C64::new(0.0, omega(self.frequency) * self.self_capacitance);
        y.inv()
    }

    /// Self-resonance frequency of L with C_self.
    pub fn self_resonance(&self) -> f64 {
        1.0 / (2.0 * PI * (self.inductance * self.self_capacitance).sqrt())
    }
}

/// Self-inductance (H).
pub fn solenoid_inductance(geom: &CoilGeometry) -> Result<f64> {
    geom.validate()?;
    let a = geom.loop_radius;
    if !geom.is_solenoid() {
        return Ok(MU_0 * a * ((8.0 * a / geom.wire_radius).ln() - 2.0));
    }
    let n = geom.turns as f64;
    let len = geom.height();
    let sheet = MU_0 * PI * a * a * n * n / len * nagaoka(2.0 * a, len);
    // Rosa: self-inductance of round turns vs. current strips, and the mutual term.
    let rosa_a = 1.25 - (2.0 * geom.turn_spacing_factor).ln();
    let rosa_b = rosa_mutual_correction(geom.turns);
    Ok(sheet - MU_0 * a * n * (rosa_a + rosa_b))
}

/// Nagaoka coefficient of a current sheet with the given diameter and length.
pub fn nagaoka(diameter: f64, length: f64) -> f64 {
    let k2 = diameter * diameter / (diameter * diameter + length * length);
    let k = k2.sqrt();
    let kp2 = 1.0 - k2;
    let (big_k, big_e) = elliptic_ke(k);
    4.0 / (3.0 * PI * kp2.sqrt()) * (kp2 / k2 * (big_k - big_e) + big_e - k)
}

/// Rosa's correction `B(N)` for the mutual inductance between round-wire turns.
pub fn rosa_mutual_correction(turns: u32) -> f64 {
    if turns <= 1 {
        return 0.0;
    }
    let n = turns as f64;
    (2.0 * PI).ln() - 1.5 - n.ln() / (6.0 * n) - 0.330_842_36 / n - 1.0 / (120.0 * n.powi(3))
        + 1.0 / (504.0 * n.powi(5))
        - 0.001_192_3 / n.powi(7)
        + 0.000_506_8 / n.powi(9)
}

/// Skin depth in a non-magnetic conductor (m).
pub fn skin_depth(f: f64, conductivity: f64) -> f64 {
    1.0 / (PI * f * MU_0 * conductivity).sqrt()
}

/// `wire_length / (sigma pi r_w^2)`.
pub fn dc_resistance(geom: &CoilGeometry) -> f64 {
    geom.wire_length() / (geom.material_conductivity * PI * geom.wire_radius * geom.wire_radius)
}

/// AC/DC ratio from skin effect alone, as a function of `r_w / delta`.
pub fn skin_factor(radius_over_depth: f64) -> f64 {
    if radius_over_depth > 4.0 {
        0.5 * radius_over_depth + 0.25
    } else {
        // Linear in r/delta from 1 at DC to the surface-current value 2.25 at r/delta = 4.
        1.0 + 1.25 * radius_over_depth / 4.0
    }
}

const PROXIMITY_PITCH: [f64; 9] = [1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 10.0];
const PROXIMITY_TURNS: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 16.0, 32.0];
// Rows: pitch / wire diameter. Columns: turns. High-frequency resistance of the
// winding relative to an isolated wire of the same length; the excess scales as
// (d/p)^2 and saturates with the number of neighbouring turns.
const PROXIMITY_TABLE: [[f64; 10]; 9] = [
    [1.000, 1.703, 1.938, 2.055, 2.125, 2.172, 2.230, 2.266, 2.318, 2.362],
    [1.000, 1.450, 1.600, 1.675, 1.720, 1.750, 1.788, 1.810, 1.844, 1.872],
    [1.000, 1.312, 1.417, 1.469, 1.500, 1.521, 1.547, 1.562, 1.586, 1.605],
    [1.000, 1.176, 1.234, 1.264, 1.281, 1.293, 1.308, 1.316, 1.330, 1.341],
    [1.000, 1.113, 1.150, 1.169, 1.180, 1.188, 1.197, 1.203, 1.211, 1.218],
    [1.000, 1.078, 1.104, 1.117, 1.125, 1.130, 1.137, 1.141, 1.146, 1.151],
    [1.000, 1.044, 1.059, 1.066, 1.070, 1.073, 1.077, 1.079, 1.082, 1.085],
    [1.000, 1.020, 1.026, 1.029, 1.031, 1.033, 1.034, 1.035, 1.037, 1.038],
    [1.000, 1.007, 1.009, 1.011, 1.011, 1.012, 1.012, 1.013, 1.013, 1.014],
];

fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
    let x = x.clamp(grid[0], grid[grid.len() - 1]);
    let i = grid.windows(2).position(|w| x <= w[1]).unwrap_or(grid.len() - 2);
    let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
    (i, t)
}

/// Proximity-effect multiplier, bilinear in (pitch ratio, turns), clamped to the table.
pub fn proximity_factor(pitch_ratio: f64, turns: u32) -> f64 {
    let (i, s) = bracket(&PROXIMITY_PITCH, pitch_ratio);
    let (j, t) = bracket(&PROXIMITY_TURNS, turns as f64);
    let p = &PROXIMITY_TABLE;
    (1.0 - s) * ((1.0 - t) * p[i][j] + t * p[i][j + 1])
        + s * ((1.0 - t) * p[i + 1][j] + t * p[i + 1][j + 1])
}

/// Ohmic resistance including skin and proximity effect (ohm).
pub fn ohmic_resistance(geom: &CoilGeometry, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return domain(format!("frequency must be positive (got {f})"));
    }
    geom.validate()?;
    let x = geom.wire_radius / skin_depth(f, geom.material_conductivity);
    let prox = if geom.is_solenoid() {
        proximity_factor(geom.turn_spacing_factor, geom.turns)
    } else {
        1.0
    };
    // Proximity losses build up together with the current crowding.
    let weight = (x / 4.0).min(1.0);
    Ok(dc_resistance(geom) * skin_factor(x) * (1.0 + (prox - 1.0) * weight))
}

/// Radiation resistance `(1/3) mu k^3 f nu^2 S^2` (ohm).
pub fn radiation_resistance(f: f64, turns: u32, area: f64) -> Result<f64> {
    if !(f > 0.0) {
        return domain(format!("frequency must be positive (got {f})"));
    }
    if !(area >= 0.0) {
        return domain(format!("coil area must be non-negative (got {area})"));
    }
    let k = wavenumber(f);
    let nu = turns as f64;
    Ok(MU_0 * k.powi(3) * f * nu * nu * area * area / 3.0)
}

/// Self-capacitance (F).
pub fn self_capacitance(geom: &CoilGeometry) -> Result<f64> {
    geom.validate()?;
    if !geom.is_solenoid() {
        return Ok(LOOP_STRAY_CAPACITANCE_PER_M * 2.0 * PI * geom.loop_radius);
    }
    // Medhurst: C[pF] = D[cm] (0.1126 l/D + 0.08 + 0.27 sqrt(D/l)).
    let d = 2.0 * geom.loop_radius;
    let aspect = geom.height() / d;
    Ok(1e-10 * d * (0.1126 * aspect + 0.08 + 0.27 / aspect.sqrt()))
}

/// `2 pi f L / (R_ohm + R_rad)`.
pub fn quality_factor(circ: &CoilCircuit, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return domain(format!("frequency must be positive (got {f})"));
    }
    Ok(omega(f) * circ.inductance / circ.resistance())
}
