//! The biomedical setup: external array, in-body swarm sampling, fixed matching
//! designs, and the per-realization link evaluations behind the Monte Carlo studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{LinkSystem, Matching, Termination};
use crate::coil_models::{CoilCircuit, CoilGeometry};
use crate::config::{ArrayConfig, MonteCarloConfig, ScenarioConfig, SwarmConfig};
use crate::coupling::{resonance_capacitance, AntennaState, CouplingModel};
use crate::error::{domain, numerical, Error, Result};
use crate::link::{
    coop_downlink_beamform, coop_uplink_rate, whiten, whitened_mrc_gain,
    CoopBin, PowerBudget, Scheme,
};
use crate::multiport::lumped::{synthesize_l_network, synthesize_t_network_snr_opt, t_start_from_l};
use crate::multiport::LumpedNetwork;
use crate::{omega, CMatrix, Vec3, C64};

/// Extra coupling-model band beyond the tuning span, so rate grids always fit.
const BAND_MARGIN_HZ: f64 = 15e6;

// ---------------------------------------------------------------------------
// Geometry

/// Centre coil plus two rings on a spherical cap bulging toward the body.
///
/// A ring coil at radius `rho` with tilt `t` sits at depth `rho tan(t/2)`, which is the
/// point of a sphere tangent to the array plane whose normal is tilted by `t`; its axis
/// is that inward normal. Every other ring coil additionally cants its axis by
/// `cant_deg` toward the azimuthal direction.
pub fn build_external_array(cfg: &ArrayConfig) -> Result<Vec<CoilGeometry>> {
    let radius = cfg.coil_circumference_m / (2.0 * std::f64::consts::PI);
    let wire = 0.5 * cfg.wire_diameter_m;
    let mut coils = vec![CoilGeometry::single_turn(
        Vec3::zeros(),
        Vec3::new(0.0, 0.0, -1.0),
        radius,
        wire,
    )];
    let cant = cfg.cant_deg.to_radians();
    for (rho, count, tilt) in [
        (cfg.inner_ring_radius_m, cfg.inner_ring_count, cfg.inner_ring_tilt_deg),
        (cfg.outer_ring_radius_m, cfg.outer_ring_count, cfg.outer_ring_tilt_deg),
    ] {
        let t = tilt.to_radians();
        for i in 0..count {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let (s, c) = phi.sin_cos();
            let center = Vec3::new(rho * c, rho * s, -rho * (0.5 * t).tan());
            let normal = Vec3::new(-t.sin() * c, -t.sin() * s, -t.cos());
            let axis = if i % 2 == 1 {
                normal * cant.cos() + Vec3::new(-s, c, 0.0) * cant.sin()
            } else {
                normal
            };
            coils.push(CoilGeometry::single_turn(center, axis, radius, wire));
        }
    }
    for c in &coils {
        c.validate()?;
    }
    for i in 0..coils.len() {
        for j in 0..i {
            if coils_collide(&coils[i], &coils[j], 0.0) {
                return domain(format!("external coils {j} and {i} overlap"));
            }
        }
    }
    Ok(coils)
}

/// Bounding capsule of a coil: winding axis segment and radius, both grown by `margin`.
fn capsule(c: &CoilGeometry, margin: f64) -> (Vec3, Vec3, f64) {
    let half = 0.5 * (c.height() + 2.0 * c.wire_radius) * (1.0 + margin);
    let r = (c.loop_radius + c.wire_radius) * (1.0 + margin);
    let axis = c.axis_vec();
    (c.center_vec() - axis * half, c.center_vec() + axis * half, r)
}

/// Closest distance between segments `p0-p1` and `q0-q1`.
fn segment_distance(p0: Vec3, p1: Vec3, q0: Vec3, q1: Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-300;
    let (s, t) = if a <= eps && e <= eps {
        (0.0, 0.0)
    } else if a <= eps {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Conservative intersection test of the coils' bounding cylinders (via capsules).
pub fn coils_collide(a: &CoilGeometry, b: &CoilGeometry, margin: f64) -> bool {
    let (a0, a1, ra) = capsule(a, margin);
    let (b0, b1, rb) = capsule(b, margin);
    segment_distance(a0, a1, b0, b1) < ra + rb
}

/// Random in-body coils around `anchor`.
///
/// The first sensor sits exactly at the anchor; every other coil is drawn with
/// independent Gaussian coordinates (`sigma_sizes` coil sizes) and a uniform random
/// axis, and redrawn until it clears all coils placed before it.
pub fn sample_swarm<R: Rng + ?Sized>(
    n_relays: usize,
    n_sensors: usize,
    anchor: Vec3,
    template: &CoilGeometry,
    swarm: &SwarmConfig,
    rng: &mut R,
) -> Result<(Vec<CoilGeometry>, Vec<CoilGeometry>)> {
    if n_relays + n_sensors == 0 {
        return domain("a swarm needs at least one coil");
    }
    let size = template.diameter().max(template.height());
    let sigma = swarm.sigma_sizes * size;
    let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let mut placed: Vec<CoilGeometry> = Vec::with_capacity(n_relays + n_sensors);
    let mut attempts = 0usize;
    for k in 0..n_relays + n_sensors {
        loop {
            let axis = Vec3::from(UnitSphere.sample(rng));
            let center = if k == 0 && n_sensors > 0 {
                anchor
            } else {
                anchor + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
            };
            let coil = template.with_pose(center, axis);
            attempts += 1;
            if !placed.iter().any(|p| coils_collide(p, &coil, swarm.collision_margin)) {
                placed.push(coil);
                break;
            }
            if attempts >= swarm.max_attempts {
                return Err(Error::Sampling(format!(
                    "no collision-free placement after {attempts} draws ({} of {} coils placed)",
                    placed.len(),
                    n_relays + n_sensors
                )));
            }
        }
    }
    let relays = placed.split_off(n_sensors);
    Ok((placed, relays))
}

/// `n` quasi-uniform directions (Fibonacci sphere) followed by the three axes.
pub fn orientation_set(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut out: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            Vec3::new(r * c, r * s, z)
        })
        .collect();
    out.extend([Vec3::x(), Vec3::y(), Vec3::z()]);
    out
}

/// Per-realization generator: the master seed with the realization index as stream.
pub fn child_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Log-spaced grid of `n` values in `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

// ---------------------------------------------------------------------------
// Prepared scenario

/// Uplink rate grid: bins of width `bin_width` and the flat-allocation band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateGrid {
    pub centers: Vec<f64>,
    pub bin_width: f64,
    /// Bins inside the external coil's 3 dB band.
    pub band: Vec<bool>,
    pub band_edges: (f64, f64),
}

/// Swarm coils of one realization.
#[derive(Debug, Clone)]
pub struct Placement {
    pub sensors: Vec<CoilGeometry>,
    pub relays: Vec<CoilGeometry>,
}

/// The fixed parts of the setup, designed once per configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub external: Vec<CoilGeometry>,
    /// Reference sensor at the anchor, axis along z.
    pub sensor_template: CoilGeometry,
    pub anchor: Vec3,
    /// Coupling model of the external array over the working band.
    pub array_model: CouplingModel,
    /// Nominal sensor L network (isolated coil matched to `R` at `f_design`).
    pub sensor_match: LumpedNetwork,
    /// Per-coil T networks of the receiving array.
    pub array_match: Vec<LumpedNetwork>,
    pub relay_capacitance: f64,
    pub rate_grid: RateGrid,
    pub tuning_grid: Vec<f64>,
}

/// Outcome of one scheme in one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeOutcome {
    /// Power received by the sensor of interest (W).
    pub received_power: f64,
    pub downlink_frequency: f64,
    /// Uplink rate of the sensor of interest (bit/s).
    pub rate: f64,
    pub outage: bool,
    /// Relative duality gap of the cooperative log-det solves (0 for waterfilling).
    pub solver_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationOutcome {
    pub index: usize,
    pub simple: SchemeOutcome,
    pub elaborate: SchemeOutcome,
    /// Elaborate scheme with the relays removed.
    pub reference: SchemeOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonteCarloKind {
    /// One sensor among passive relays.
    Relay,
    /// Several sensors transmitting cooperatively.
    Coop,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub kind: MonteCarloKind,
    pub outcomes: Vec<RealizationOutcome>,
    pub failures: Vec<(usize, String)>,
}

/// Per-watt SNR of the matched reference path between one array coil and its LNA:
/// `|v_LNA|^2 / R` per unit series EMF in the coil.
fn matched_coil_gain(coil: &CoilGeometry, net: &LumpedNetwork, r: f64, f: f64) -> Result<f64> {
    let circ = CoilCircuit::evaluate(coil, f)?;
    let z_coil = circ.port_impedance();
    // Open-circuit port voltage per unit EMF: capacitive divider of the self-capacitance.
    let y_c = C64::new(0.0, omega(f) * circ.self_capacitance);
    let v_port = (C64::new(1.0, 0.0) + circ.series_impedance() * y_c).inv();
    let z = net.evaluate(f)?;
    let denom = z[(1, 1)] + z_coil;
    let v_oc = z[(0, 1)] / denom * v_port;
    let z_out = z[(0, 0)] - z[(0, 1)] * z[(1, 0)] / denom;
    let v_l = v_oc * r / (z_out + r);
    Ok(v_l.norm_sqr() / r)
}

/// Half-power band around the peak of `gain` sampled at `freqs`, linearly interpolated.
pub fn half_power_band(freqs: &[f64], gain: &[f64]) -> Result<(f64, f64)> {
    let (peak, g_max) = gain
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Domain("empty spectrum".into()))?;
    let half = 0.5 * g_max;
    let cross = |i: usize, j: usize| {
        let t = (half - gain[i]) / (gain[j] - gain[i]);
        freqs[i] + t * (freqs[j] - freqs[i])
    };
    let lo = (1..=peak).rev().find(|&i| gain[i - 1] < half).map(|i| cross(i - 1, i));
    let hi = (peak..freqs.len() - 1).find(|&i| gain[i + 1] < half).map(|i| cross(i + 1, i));
    match (lo, hi) {
        (Some(lo), Some(hi)) => Ok((lo, hi)),
        _ => numerical("the 3 dB band is not contained in the searched spectrum"),
    }
}

impl Scenario {
    /// Builds the array and designs the fixed matching networks.
    pub fn prepare(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let f = config.design_frequency_hz;
        let r = config.reference_resistance_ohm;
        let external = build_external_array(&config.array)?;
        let half_band = config.rate.tuning_span_hz + BAND_MARGIN_HZ;
        let band = ((f - half_band).max(0.5 * f), f + half_band);
        let array_model = CouplingModel::new(&external, band, config.dipole_beyond_diameters)?;
        let anchor = Vec3::new(0.0, 0.0, -config.sensor.depth_m);
        let s = &config.sensor;
        let sensor_template = CoilGeometry::sensor_solenoid(anchor, Vec3::z(), s.size_m, s.turns, s.spacing_factor);
        sensor_template.validate()?;
        let sensor_circuit = CoilCircuit::evaluate(&sensor_template, f)?;
        let sensor_match = synthesize_l_network(sensor_circuit.port_impedance(), C64::new(r, 0.0), f)?;
        let l_eff = sensor_circuit.port_impedance().im / omega(f);
        if !(l_eff > 0.0) {
            return domain("relay coils are above self-resonance at the design frequency");
        }
        let relay_capacitance = resonance_capacitance(l_eff, f);

        let mut scn = Self {
            config: config.clone(),
            external,
            sensor_template,
            anchor,
            array_model,
            sensor_match,
            array_match: Vec::new(),
            relay_capacitance,
            rate_grid: RateGrid {
                centers: vec![f],
                bin_width: config.rate.bin_width_hz,
                band: vec![true],
                band_edges: (f, f),
            },
            tuning_grid: Vec::new(),
        };
        scn.array_match = scn.design_array_match()?;
        scn.rate_grid = scn.design_rate_grid()?;
        let steps = (config.rate.tuning_span_hz / config.rate.tuning_step_hz + 1e-9).floor() as i64;
        scn.tuning_grid = (-steps..=steps).map(|k| f + k as f64 * config.rate.tuning_step_hz).collect();
        Ok(scn)
    }

    pub fn n_external(&self) -> usize {
        self.external.len()
    }

    /// Sensor of the configured construction at a new pose and size.
    pub fn sensor_at(&self, center: Vec3, axis: Vec3, size: f64) -> CoilGeometry {
        let s = &self.config.sensor;
        CoilGeometry::sensor_solenoid(center, axis, size, s.turns, s.spacing_factor)
    }

    /// L network matching an isolated coil to `R` at the design frequency.
    pub fn nominal_match(&self, coil: &CoilGeometry) -> Result<LumpedNetwork> {
        let f = self.config.design_frequency_hz;
        let z = CoilCircuit::evaluate(coil, f)?.port_impedance();
        synthesize_l_network(z, C64::new(self.config.reference_resistance_ohm, 0.0), f)
    }

    /// Array coupling model extended by the swarm, in the order `[array, sensors, relays]`.
    pub fn model_for(&self, p: &Placement) -> Result<CouplingModel> {
        let extra: Vec<CoilGeometry> = p.sensors.iter().chain(p.relays.iter()).cloned().collect();
        self.array_model.extend(&extra)
    }

    fn terminations(&self, model: &CouplingModel, n_sensors: usize) -> Vec<Termination> {
        let first_relay = self.n_external() + n_sensors;
        (0..model.len())
            .map(|i| {
                if i >= first_relay {
                    Termination::Capacitor(self.relay_capacitance)
                } else {
                    Termination::Open
                }
            })
            .collect()
    }

    /// Sensors transmit through `sensor_nets`; the array receives through its T networks.
    pub fn uplink_system(
        &self,
        model: &CouplingModel,
        n_sensors: usize,
        sensor_nets: Vec<LumpedNetwork>,
    ) -> LinkSystem {
        let n_ext = self.n_external();
        let mut sys = LinkSystem::new(
            model.clone(),
            (n_ext..n_ext + n_sensors).collect(),
            (0..n_ext).collect(),
            Matching::Networks(sensor_nets),
            Matching::Networks(self.array_match.clone()),
            self.config.reference_resistance_ohm,
            self.config.noise.clone(),
        );
        sys.terminations = self.terminations(model, n_sensors);
        sys
    }

    /// The array transmits through an ideal power match; sensors receive through `sensor_nets`.
    pub fn downlink_system(
        &self,
        model: &CouplingModel,
        n_sensors: usize,
        sensor_nets: Vec<LumpedNetwork>,
    ) -> LinkSystem {
        let n_ext = self.n_external();
        let mut sys = LinkSystem::new(
            model.clone(),
            (0..n_ext).collect(),
            (n_ext..n_ext + n_sensors).collect(),
            Matching::PowerMatch,
            Matching::Networks(sensor_nets),
            self.config.reference_resistance_ohm,
            self.config.noise.clone(),
        );
        sys.terminations = self.terminations(model, n_sensors);
        sys
    }

    /// Mean uplink SNR (dB) over three orthogonal sensor orientations at the anchor,
    /// as a function of the array T networks.
    fn design_array_match(&self) -> Result<Vec<LumpedNetwork>> {
        let cfg = &self.config;
        let f = cfg.design_frequency_hz;
        let probes: Vec<(LinkSystem, AntennaState)> = [Vec3::x(), Vec3::y(), Vec3::z()]
            .iter()
            .map(|axis| {
                let placement = Placement {
                    sensors: vec![self.sensor_template.with_pose(self.anchor, *axis)],
                    relays: Vec::new(),
                };
                let model = self.model_for(&placement)?;
                let state = AntennaState::new(&model, f)?;
                Ok((self.uplink_system(&model, 1, vec![self.sensor_match.clone()]), state))
            })
            .collect::<Result<_>>()?;
        let w = cfg.rate.bin_width_hz;
        let objective = |nets: &[LumpedNetwork]| -> Result<f64> {
            let mut acc = 0.0;
            for (sys, state) in &probes {
                let mut sys = sys.clone();
                sys.rx_matching = Matching::Networks(nets.to_vec());
                let bin = sys.evaluate_at(state, w, true)?;
                let h = bin.channel.h_matrix.column(0).into_owned();
                acc += 10.0 * whitened_mrc_gain(&h, &bin.channel.noise_cov)?.log10();
            }
            Ok(acc / probes.len() as f64)
        };
        let coil_z = CoilCircuit::evaluate(&self.external[0], f)?.port_impedance();
        let start = synthesize_l_network(coil_z, cfg.noise.lna.z_opt().conj(), f)?;
        let res = synthesize_t_network_snr_opt(
            self.n_external(),
            t_start_from_l(&start),
            f,
            objective,
            &cfg.t_network,
        )?;
        log::info!(
            "array T networks: mean SNR {:.3} dB (start {:.3} dB)",
            res.objective,
            res.initial_objective
        );
        Ok(res.networks)
    }

    /// Bins of `bin_width` spanning `band_factor` times the matched array coil's 3 dB band.
    fn design_rate_grid(&self) -> Result<RateGrid> {
        let cfg = &self.config;
        let f = cfg.design_frequency_hz;
        let w = cfg.rate.bin_width_hz;
        let (f_lo, f_hi) = self.array_model.band();
        let n = ((f_hi - f_lo) / (0.25 * w)).floor() as usize;
        let freqs: Vec<f64> = (0..=n).map(|k| f_lo + k as f64 * (f_hi - f_lo) / n as f64).collect();
        let gain: Vec<f64> = freqs
            .iter()
            .map(|&x| matched_coil_gain(&self.external[0], &self.array_match[0], cfg.reference_resistance_ohm, x))
            .collect::<Result<_>>()?;
        let (lo, hi) = half_power_band(&freqs, &gain)?;
        let center = 0.5 * (lo + hi);
        let n_bins = ((cfg.rate.band_factor * (hi - lo) / w).ceil() as usize).max(1);
        let centers: Vec<f64> = (0..n_bins)
            .map(|k| center + (k as f64 - 0.5 * (n_bins as f64 - 1.0)) * w)
            .collect();
        let (first, last) = (centers[0] - 0.5 * w, centers[n_bins - 1] + 0.5 * w);
        if first < f_lo || last > f_hi {
            return numerical(format!(
                "rate grid [{first:.6e}, {last:.6e}] Hz leaves the modelled band"
            ));
        }
        let mut band: Vec<bool> = centers.iter().map(|&c| c >= lo && c <= hi).collect();
        if !band.iter().any(|b| *b) {
            let nearest = (0..n_bins)
                .min_by(|&a, &b| (centers[a] - center).abs().total_cmp(&(centers[b] - center).abs()))
                .expect("non-empty grid");
            band[nearest] = true;
        }
        if (center - f).abs() > hi - lo {
            log::warn!("array 3 dB band centre {center:.6e} Hz is far from the design frequency");
        }
        Ok(RateGrid {
            centers,
            bin_width: w,
            band,
            band_edges: (lo, hi),
        })
    }

    /// Sensor L networks re-matched against the coupled port impedances (diagonal of
    /// `Z_A^in`) at the design frequency; falls back to the nominal design per sensor.
    pub fn adapted_sensor_match(&self, model: &CouplingModel, n_sensors: usize, nominal: &[LumpedNetwork]) -> Result<Vec<LumpedNetwork>> {
        let f = self.config.design_frequency_hz;
        let r = C64::new(self.config.reference_resistance_ohm, 0.0);
        let sys = self.uplink_system(model, n_sensors, nominal.to_vec());
        let z_in = sys.tx_port_impedance(f)?;
        Ok((0..n_sensors)
            .map(|i| {
                synthesize_l_network(z_in[(i, i)], r, f).unwrap_or_else(|e| {
                    log::debug!("keeping nominal match for sensor {i}: {e}");
                    nominal[i].clone()
                })
            })
            .collect())
    }

    /// Per-watt uplink SNR of sensor 0 in every rate bin, for each set of sensor networks.
    fn single_uplink_gains(&self, model: &CouplingModel, nets: &[Vec<LumpedNetwork>]) -> Result<Vec<Vec<f64>>> {
        let grid = &self.rate_grid;
        let systems: Vec<LinkSystem> = nets.iter().map(|n| self.uplink_system(model, 1, n.clone())).collect();
        let per_bin: Vec<Vec<f64>> = grid
            .centers
            .iter()
            .map(|&f| {
                let state = AntennaState::new(model, f)?;
                systems
                    .iter()
                    .map(|sys| {
                        let bin = sys.evaluate_at(&state, grid.bin_width, true)?;
                        let h = bin.channel.h_matrix.column(0).into_owned();
                        whitened_mrc_gain(&h, &bin.channel.noise_cov)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok((0..nets.len()).map(|s| per_bin.iter().map(|b| b[s]).collect()).collect())
    }

    /// Downlink channel rows `H` (sensors x array) at each frequency.
    fn downlink_channels(&self, model: &CouplingModel, n_sensors: usize, nets: &[LumpedNetwork], freqs: &[f64]) -> Result<Vec<CMatrix>> {
        let sys = self.downlink_system(model, n_sensors, nets.to_vec());
        let w = self.config.rate.bin_width_hz;
        freqs
            .iter()
            .map(|&f| Ok(sys.evaluate(f, w, false)?.channel.h_matrix))
            .collect()
    }

    fn uplink_single(&self, gains: &[f64], budget: &PowerBudget, scheme: Scheme) -> Result<f64> {
        let grid = &self.rate_grid;
        Ok(crate::link::uplink_rate_single(gains, &grid.band, budget, scheme, grid.bin_width)?.total_rate)
    }

    /// Both schemes for a single sensor (sensor 0 of the placement; others ignored).
    pub fn evaluate_single(&self, placement: &Placement) -> Result<(SchemeOutcome, SchemeOutcome)> {
        let (s, e) = self.single_schemes(placement, true)?;
        Ok((s.expect("requested"), e))
    }

    fn single_schemes(&self, placement: &Placement, with_simple: bool) -> Result<(Option<SchemeOutcome>, SchemeOutcome)> {
        let cfg = &self.config;
        let f = cfg.design_frequency_hz;
        let single = Placement {
            sensors: placement.sensors[..1].to_vec(),
            relays: placement.relays.clone(),
        };
        let model = self.model_for(&single)?;
        let nominal = vec![self.sensor_match.clone()];
        let adapted = self.adapted_sensor_match(&model, 1, &nominal)?;

        let freqs = &self.tuning_grid;
        let h_nominal = self.downlink_channels(&model, 1, &nominal, &[f])?;
        let h_adapted = self.downlink_channels(&model, 1, &adapted, freqs)?;
        let p_simple = cfg.tx_power_w * h_nominal[0].norm_squared();
        let (k_best, p_elab) = h_adapted
            .iter()
            .map(|h| cfg.tx_power_w * h.norm_squared())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty tuning grid");

        let budget_s = PowerBudget::from_received(p_simple, cfg.activation_power_w);
        let budget_e = PowerBudget::from_received(p_elab, cfg.activation_power_w);
        let mut want = Vec::new();
        let run_simple = with_simple && !budget_s.in_outage;
        if run_simple {
            want.push(nominal.clone());
        }
        if !budget_e.in_outage {
            want.push(adapted.clone());
        }
        let gains = if want.is_empty() { Vec::new() } else { self.single_uplink_gains(&model, &want)? };
        let mut g = gains.into_iter();
        let rate_s = if run_simple { self.uplink_single(&g.next().unwrap(), &budget_s, Scheme::Simple)? } else { 0.0 };
        let rate_e = if budget_e.in_outage { 0.0 } else { self.uplink_single(&g.next().unwrap(), &budget_e, Scheme::Elaborate)? };
        Ok((
            with_simple.then_some(SchemeOutcome {
                received_power: p_simple,
                downlink_frequency: f,
                rate: rate_s,
                outage: budget_s.in_outage,
                solver_gap: 0.0,
            }),
            SchemeOutcome {
                received_power: p_elab,
                downlink_frequency: freqs[k_best],
                rate: rate_e,
                outage: budget_e.in_outage,
                solver_gap: 0.0,
            },
        ))
    }

    /// Downlink beamforming to all sensors with the constraint on sensor 0; returns the
    /// chosen frequency index and received powers.
    fn coop_downlink(&self, channels: &[CMatrix]) -> Result<(usize, Vec<f64>)> {
        let cfg = &self.config;
        let mut best: Option<(bool, f64, usize, Vec<f64>)> = None;
        for (k, h) in channels.iter().enumerate() {
            let bf = coop_downlink_beamform(h, cfg.tx_power_w, cfg.activation_power_w, 0)?;
            let met = bf.constraint_met;
            let score = if met { bf.received.iter().sum() } else { bf.received[0] };
            let better = match &best {
                None => true,
                Some((m, s, _, _)) => (met && !m) || (met == *m && score > *s),
            };
            if better {
                best = Some((met, score, k, bf.received));
            }
        }
        let (_, _, k, received) = best.expect("at least one frequency");
        Ok((k, received))
    }

    /// Whitened cooperative bins over the rate grid, one list per set of sensor networks.
    fn coop_bins(&self, model: &CouplingModel, n_sensors: usize, nets: &[&[LumpedNetwork]]) -> Result<Vec<Vec<CoopBin>>> {
        let grid = &self.rate_grid;
        let systems: Vec<LinkSystem> = nets.iter().map(|n| self.uplink_system(model, n_sensors, n.to_vec())).collect();
        let per_bin: Vec<Vec<CoopBin>> = grid
            .centers
            .iter()
            .map(|&f| {
                let state = AntennaState::new(model, f)?;
                systems
                    .iter()
                    .map(|sys| {
                        let bin = sys.evaluate_at(&state, grid.bin_width, true)?;
                        Ok(CoopBin {
                            h: whiten(&bin.channel.h_matrix, &bin.channel.noise_cov)?,
                            z_t_in: bin.channel.z_t_in,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut out: Vec<Vec<CoopBin>> = vec![Vec::with_capacity(per_bin.len()); nets.len()];
        for bins in per_bin {
            for (s, b) in bins.into_iter().enumerate() {
                out[s].push(b);
            }
        }
        Ok(out)
    }

    fn coop_rate(&self, bins: &[CoopBin], budgets: &[f64], heuristic: bool) -> Result<(f64, f64)> {
        let grid = &self.rate_grid;
        let r = self.config.reference_resistance_ohm;
        let res = coop_uplink_rate(bins, &grid.band, budgets, heuristic, grid.bin_width, r, &self.config.log_det)?;
        if res.kkt_residual > 1e-5 {
            log::warn!("cooperative uplink solved to a duality gap of {:.3e}", res.kkt_residual);
        }
        Ok((res.total_rate, res.kkt_residual))
    }

    /// Both schemes with cooperative downlink and uplink among all sensors of the placement.
    pub fn evaluate_coop(&self, placement: &Placement) -> Result<(SchemeOutcome, SchemeOutcome)> {
        let (s, e) = self.coop_schemes(placement, true)?;
        Ok((s.expect("requested"), e))
    }

    fn coop_schemes(&self, placement: &Placement, with_simple: bool) -> Result<(Option<SchemeOutcome>, SchemeOutcome)> {
        let cfg = &self.config;
        let f = cfg.design_frequency_hz;
        let n_s = placement.sensors.len();
        let model = self.model_for(placement)?;
        let nominal = vec![self.sensor_match.clone(); n_s];
        let adapted = self.adapted_sensor_match(&model, n_s, &nominal)?;

        let budgets = |received: &[f64]| -> Vec<f64> {
            received
                .iter()
                .map(|&p| PowerBudget::from_received(p, cfg.activation_power_w).uplink_power)
                .collect()
        };
        let rec_s = if with_simple {
            let h_nom = self.downlink_channels(&model, n_s, &nominal, &[f])?;
            self.coop_downlink(&h_nom)?.1
        } else {
            vec![0.0; n_s]
        };
        let h_ad = self.downlink_channels(&model, n_s, &adapted, &self.tuning_grid)?;
        let (k_e, rec_e) = self.coop_downlink(&h_ad)?;

        let b_s = budgets(&rec_s);
        let b_e = budgets(&rec_e);
        let run_s = with_simple && b_s[0] > 0.0;
        let run_e = b_e[0] > 0.0;
        let mut want: Vec<&[LumpedNetwork]> = Vec::new();
        if run_s {
            want.push(&nominal);
        }
        if run_e {
            want.push(&adapted);
        }
        let bins = if want.is_empty() { Vec::new() } else { self.coop_bins(&model, n_s, &want)? };
        let mut bins = bins.into_iter();
        let (rate_s, gap_s) = if run_s { self.coop_rate(&bins.next().unwrap(), &b_s, false)? } else { (0.0, 0.0) };
        let (rate_e, gap_e) = if run_e { self.coop_rate(&bins.next().unwrap(), &b_e, true)? } else { (0.0, 0.0) };
        let (out_s, out_e) = (!run_s, !run_e);
        Ok((
            with_simple.then_some(SchemeOutcome {
                received_power: rec_s[0],
                downlink_frequency: f,
                rate: rate_s,
                outage: out_s,
                solver_gap: gap_s,
            }),
            SchemeOutcome {
                received_power: rec_e[0],
                downlink_frequency: self.tuning_grid[k_e],
                rate: rate_e,
                outage: out_e,
                solver_gap: gap_e,
            },
        ))
    }

    /// Samples realization `index` of a Monte Carlo study.
    pub fn sample_placement(&self, mc: &MonteCarloConfig, seed: u64, index: usize) -> Result<Placement> {
        let mut rng = child_rng(seed, index);
        let (sensors, relays) = sample_swarm(
            mc.n_relays,
            mc.n_sensors,
            self.anchor,
            &self.sensor_template,
            &self.config.swarm,
            &mut rng,
        )?;
        Ok(Placement { sensors, relays })
    }

    /// One realization: SIMPLE and ELABORATE with relays, and ELABORATE without them.
    pub fn realization(&self, kind: MonteCarloKind, mc: &MonteCarloConfig, seed: u64, index: usize) -> Result<RealizationOutcome> {
        let placement = self.sample_placement(mc, seed, index)?;
        let bare = Placement {
            sensors: placement.sensors.clone(),
            relays: Vec::new(),
        };
        let (simple, elaborate, reference) = match kind {
            MonteCarloKind::Relay => {
                let (s, e) = self.evaluate_single(&placement)?;
                (s, e, self.single_schemes(&bare, false)?.1)
            }
            MonteCarloKind::Coop => {
                let (s, e) = self.evaluate_coop(&placement)?;
                (s, e, self.coop_schemes(&bare, false)?.1)
            }
        };
        Ok(RealizationOutcome {
            index,
            simple,
            elaborate,
            reference,
        })
    }
}

/// Runs `mc.n_realizations` independent realizations in parallel.
///
/// Failed realizations are logged and excluded; reaching 1% failures is an error.
pub fn run_monte_carlo(scenario: &Scenario, mc: &MonteCarloConfig, kind: MonteCarloKind) -> Result<MonteCarloResult> {
    if mc.n_realizations == 0 {
        return domain("at least one realization is required");
    }
    let seed = scenario.config.seed;
    let results: Vec<Result<RealizationOutcome>> = (0..mc.n_realizations)
        .into_par_iter()
        .map(|i| scenario.realization(kind, mc, seed, i))
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::warn!("realization {i} failed: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    if failures.len() * 100 >= mc.n_realizations {
        return numerical(format!(
            "{} of {} realizations failed (first: {})",
            failures.len(),
            mc.n_realizations,
            failures[0].1
        ));
    }
    if !failures.is_empty() {
        log::warn!("{} of {} realizations excluded", failures.len(), mc.n_realizations);
    }
    Ok(MonteCarloResult { kind, outcomes, failures })
}

#[cfg(test)]
mod tests;
