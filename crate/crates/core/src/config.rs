//! Scenario configuration (JSON). Quantities are SI, with unit suffixes in key names.
//!
//! Unknown keys are rejected. Any value can be overridden from the command line as
//! `dotted.key=json-value` before the document is parsed.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::NoiseEnvironment;
use crate::error::{Error, Result};
use crate::link::LogDetOptions;
use crate::multiport::TOptOptions;

/// The external coil array: a centre coil and two rings on a spherical cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub coil_circumference_m: f64,
    pub wire_diameter_m: f64,
    pub inner_ring_radius_m: f64,
    pub inner_ring_count: usize,
    pub inner_ring_tilt_deg: f64,
    pub outer_ring_radius_m: f64,
    pub outer_ring_count: usize,
    pub outer_ring_tilt_deg: f64,
    /// Every other ring coil has its axis canted by this angle about the ring tangent.
    pub cant_deg: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            coil_circumference_m: 0.10,
            wire_diameter_m: 3e-3,
            inner_ring_radius_m: 0.12,
            inner_ring_count: 8,
            inner_ring_tilt_deg: 20.0,
            outer_ring_radius_m: 0.20,
            outer_ring_count: 12,
            outer_ring_tilt_deg: 35.0,
            cant_deg: 30.0,
        }
    }
}

/// In-body solenoids (sensors and relays share the construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Coil size: former diameter, equal to the winding height.
    pub size_m: f64,
    pub turns: u32,
    /// Turn pitch in wire diameters.
    pub spacing_factor: f64,
    /// Depth of the sensor of interest below the array centre.
    pub depth_m: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            size_m: 350e-6,
            turns: 5,
            spacing_factor: 1.5,
            depth_m: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwarmConfig {
    /// Per-coordinate standard deviation in coil sizes.
    pub sigma_sizes: f64,
    /// Relative clearance added to the bounding capsules.
    pub collision_margin: f64,
    pub max_attempts: usize,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            sigma_sizes: 1.5,
            collision_margin: 0.1,
            max_attempts: 10_000,
        }
    }
}

/// Frequency grids for rate integration and downlink tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateConfig {
    pub bin_width_hz: f64,
    /// Width of the rate grid in multiples of the external coil's 3 dB bandwidth.
    pub band_factor: f64,
    /// Downlink tuning covers `f_design ± tuning_span_hz`.
    pub tuning_span_hz: f64,
    pub tuning_step_hz: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            bin_width_hz: 100e3,
            band_factor: 2.0,
            tuning_span_hz: 25e6,
            tuning_step_hz: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub n_bins: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            f_lo_hz: 500e6,
            f_hi_hz: 1000e6,
            n_bins: 501,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoilSweepConfig {
    pub size_min_m: f64,
    pub size_max_m: f64,
    pub n_sizes: usize,
    /// Quasi-uniform orientations on the sphere, in addition to the three axes.
    pub n_orientations: usize,
}

impl Default for CoilSweepConfig {
    fn default() -> Self {
        Self {
            size_min_m: 100e-6,
            size_max_m: 500e-6,
            n_sizes: 25,
            n_orientations: 26,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_realizations: usize,
    pub n_sensors: usize,
    pub n_relays: usize,
}

fn default_relay_cdf() -> MonteCarloConfig {
    MonteCarloConfig {
        n_realizations: 500,
        n_sensors: 1,
        n_relays: 19,
    }
}

fn default_coop_cdf() -> MonteCarloConfig {
    MonteCarloConfig {
        n_realizations: 500,
        n_sensors: 5,
        n_relays: 15,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    /// Relative tolerance of the power-consistency and reduction checks.
    pub tolerance: f64,
    pub random_cases: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            random_cases: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub design_frequency_hz: f64,
    pub tx_power_w: f64,
    pub activation_power_w: f64,
    pub reference_resistance_ohm: f64,
    /// Mutual impedances switch to the dipole form beyond this many coil diameters.
    pub dipole_beyond_diameters: f64,
    pub array: ArrayConfig,
    pub sensor: SensorConfig,
    pub swarm: SwarmConfig,
    pub noise: NoiseEnvironment,
    pub rate: RateConfig,
    pub spectrum: SpectrumConfig,
    pub coil_sweep: CoilSweepConfig,
    #[serde(default = "default_relay_cdf")]
    pub relay_cdf: MonteCarloConfig,
    #[serde(default = "default_coop_cdf")]
    pub coop_cdf: MonteCarloConfig,
    pub validate: ValidateConfig,
    pub t_network: TOptOptions,
    pub log_det: LogDetOptions,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            design_frequency_hz: 750e6,
            tx_power_w: 1.0,
            activation_power_w: 50e-9,
            reference_resistance_ohm: 50.0,
            dipole_beyond_diameters: crate::coupling::DEFAULT_DIPOLE_BEYOND,
            array: ArrayConfig::default(),
            sensor: SensorConfig::default(),
            swarm: SwarmConfig::default(),
            noise: NoiseEnvironment::default(),
            rate: RateConfig::default(),
            spectrum: SpectrumConfig::default(),
            coil_sweep: CoilSweepConfig::default(),
            relay_cdf: default_relay_cdf(),
            coop_cdf: default_coop_cdf(),
            validate: ValidateConfig::default(),
            t_network: TOptOptions::default(),
            log_det: LogDetOptions::default(),
            seed: 1,
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_error(format!("{name} must be positive and finite (got {v})")))
    }
}

impl ScenarioConfig {
    /// Parses a JSON document, applies `key=value` overrides, and validates.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let at = |e: serde_json::Error| config_error(e.to_string());
        // Straight from the text when possible, so schema errors carry a position.
        let cfg: Self = if overrides.is_empty() {
            serde_json::from_str(text).map_err(at)?
        } else {
            let mut value: Value = serde_json::from_str(text).map_err(at)?;
            for o in overrides {
                apply_override(&mut value, o)?;
            }
            serde_json::from_value(value).map_err(|e| config_error(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The defaults with overrides applied.
    pub fn default_with(overrides: &[String]) -> Result<Self> {
        let text = serde_json::to_string(&Self::default()).expect("defaults serialize");
        Self::from_json_str(&text, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("design_frequency_hz", self.design_frequency_hz)?;
        positive("tx_power_w", self.tx_power_w)?;
        positive("activation_power_w", self.activation_power_w)?;
        positive("reference_resistance_ohm", self.reference_resistance_ohm)?;
        positive("dipole_beyond_diameters", self.dipole_beyond_diameters)?;
        let a = &self.array;
        positive("array.coil_circumference_m", a.coil_circumference_m)?;
        positive("array.wire_diameter_m", a.wire_diameter_m)?;
        positive("array.inner_ring_radius_m", a.inner_ring_radius_m)?;
        positive("array.outer_ring_radius_m", a.outer_ring_radius_m)?;
        if a.wire_diameter_m >= a.coil_circumference_m / std::f64::consts::PI {
            return Err(config_error("array.wire_diameter_m must be below the loop diameter"));
        }
        let s = &self.sensor;
        positive("sensor.size_m", s.size_m)?;
        positive("sensor.spacing_factor", s.spacing_factor)?;
        positive("sensor.depth_m", s.depth_m)?;
        if s.turns < 2 {
            return Err(config_error("sensor.turns must be at least 2 (solenoid)"));
        }
        if s.spacing_factor < 1.0 {
            return Err(config_error("sensor.spacing_factor below 1 makes turns overlap"));
        }
        positive("swarm.sigma_sizes", self.swarm.sigma_sizes)?;
        if self.swarm.collision_margin < 0.0 || self.swarm.max_attempts == 0 {
            return Err(config_error("swarm.collision_margin >= 0 and max_attempts >= 1 required"));
        }
        self.noise.validate().map_err(|e| config_error(format!("noise: {e}")))?;
        let r = &self.rate;
        positive("rate.bin_width_hz", r.bin_width_hz)?;
        positive("rate.band_factor", r.band_factor)?;
        positive("rate.tuning_step_hz", r.tuning_step_hz)?;
        if !(r.tuning_span_hz >= 0.0) || r.tuning_span_hz >= self.design_frequency_hz {
            return Err(config_error("rate.tuning_span_hz must be in [0, design frequency)"));
        }
        let sp = &self.spectrum;
        positive("spectrum.f_lo_hz", sp.f_lo_hz)?;
        if !(sp.f_hi_hz > sp.f_lo_hz) || sp.n_bins == 0 {
            return Err(config_error("spectrum needs f_hi_hz > f_lo_hz and n_bins >= 1"));
        }
        let cs = &self.coil_sweep;
        positive("coil_sweep.size_min_m", cs.size_min_m)?;
        if !(cs.size_max_m >= cs.size_min_m) || cs.n_sizes == 0 {
            return Err(config_error("coil_sweep needs size_max_m >= size_min_m and n_sizes >= 1"));
        }
        for (name, mc) in [("relay_cdf", &self.relay_cdf), ("coop_cdf", &self.coop_cdf)] {
            if mc.n_realizations == 0 || mc.n_sensors == 0 {
                return Err(config_error(format!(
                    "{name} needs n_realizations >= 1 and n_sensors >= 1"
                )));
            }
        }
        positive("validate.tolerance", self.validate.tolerance)?;
        if self.t_network.multistarts == 0 || self.t_network.max_iters == 0 {
            return Err(config_error("t_network needs multistarts >= 1 and max_iters >= 1"));
        }
        positive("log_det.tolerance", self.log_det.tolerance)?;
        Ok(())
    }
}

/// Sets `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_error(format!("override '{assignment}' has an empty key")));
    }
    let value: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_error(format!("override '{key}': '{part}' is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_json_str(&cfg.to_json(), &[]).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(ScenarioConfig::from_json_str("{}", &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::from_json_str(r#"{"sensor": {"size_um": 3}}"#, &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("size_um"), "{err}");
    }

    #[test]
    fn overrides_apply_before_validation() {
        let cfg = ScenarioConfig::default_with(&[
            "relay_cdf.n_realizations=7".into(),
            "noise.spatial_correlation=identity".into(),
        ])
        .unwrap();
        assert_eq!(cfg.relay_cdf.n_realizations, 7);
        assert_eq!(cfg.noise.spatial_correlation, crate::channel::SpatialCorrelation::Identity);
        let err = ScenarioConfig::default_with(&["sensor.size_m=-1e-4".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn syntax_errors_report_position() {
        let err = ScenarioConfig::from_json_str("{\n  \"seed\": ,\n}", &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
