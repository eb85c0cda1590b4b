//! Fast invariant suite: reciprocity and passivity of assembled impedance matrices,
//! power consistency against a monolithic circuit solve, relay reduction, matching
//! targets and waterfilling optimality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::Serialize;

use crate::channel::{build_channel_matrix, transmit_current_map};
use crate::coil_models::{CoilCircuit, CoilGeometry};
use crate::config::ScenarioConfig;
use crate::coupling::{reduce_passive_relays, AntennaState, CouplingModel};
use crate::error::Result;
use crate::link::{flat_allocation, waterfill, waterfill_kkt_residual};
use crate::multiport::lumped::{synthesize_l_network, t_start_from_l, LumpedNetwork, Topology};
use crate::multiport::reference::solve_chain;
use crate::multiport::{
    synthesize_noise_match_multiport, synthesize_power_match_multiport, two_port_stage, Chain,
    PartitionedImpedance,
};
use crate::scenario::{build_external_array, coils_collide, sample_swarm};
use crate::{linalg, CMatrix, CVector, Vec3, C64};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, worst: f64, limit: f64, what: &str) -> Self {
        Self {
            name,
            passed: worst <= limit,
            detail: format!("{what} {worst:.3e} (limit {limit:.1e})"),
        }
    }

    fn failed(name: &'static str, err: impl std::fmt::Display) -> Self {
        Self {
            name,
            passed: false,
            detail: format!("error: {err}"),
        }
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Random symmetric impedance matrix with positive definite real part.
pub fn random_passive_impedance<R: Rng + ?Sized>(rng: &mut R, n: usize, loss: f64) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), 0.0));
    let re = &a * a.transpose() + CMatrix::identity(n, n).scale(loss);
    let b = CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-40.0..40.0), 0.0));
    let im = (&b + b.transpose()).scale(0.5);
    re.scale(10.0) + im * c(0.0, 1.0)
}

/// Worst relative mismatch between `(||x||^2, ||Hx||^2)` and the generator and load
/// powers of a Kirchhoff solve of the same chain driven so as to radiate `x`.
pub fn power_consistency_error(chain: &Chain<'_>, x: &CVector) -> Result<f64> {
    let analysis = chain.analyze()?;
    let h = build_channel_matrix(&analysis, chain.r)?;
    let n_t = chain.n_t();
    let i_g = transmit_current_map(&analysis.input.t)? * x;
    let v_g = (&analysis.input.t + CMatrix::identity(n_t, n_t) * c(chain.r, 0.0)) * &i_g;
    let sol = solve_chain(chain, &v_g)?;
    let p_t: f64 = sol.generator_power.iter().sum();
    let p_r: f64 = sol.load_power.iter().sum();
    let y = (&h * x).norm_squared();
    let x2 = x.norm_squared();
    Ok(((p_t - x2).abs() / x2).max((p_r - y).abs() / p_r.abs().max(f64::MIN_POSITIVE)))
}

fn reciprocity_passivity(cfg: &ScenarioConfig, scale: f64) -> Vec<Check> {
    let run = || -> Result<(f64, f64)> {
        let f = cfg.design_frequency_hz;
        let external = build_external_array(&cfg.array)?;
        let s = &cfg.sensor;
        let anchor = Vec3::new(0.0, 0.0, -s.depth_m);
        let template = CoilGeometry::sensor_solenoid(anchor, Vec3::z(), s.size_m, s.turns, s.spacing_factor);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sets = vec![external.clone()];
        for mc in [&cfg.relay_cdf, &cfg.coop_cdf] {
            let (sensors, relays) = sample_swarm(mc.n_relays, mc.n_sensors, anchor, &template, &cfg.swarm, &mut rng)?;
            let mut coils = external.clone();
            coils.extend(sensors);
            coils.extend(relays);
            sets.push(coils);
        }
        let freqs = [0.9 * f, f, 1.1 * f, cfg.spectrum.f_lo_hz, cfg.spectrum.f_hi_hz];
        let (mut sym, mut pas) = (0.0f64, 0.0f64);
        for coils in &sets {
            let lo = freqs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = freqs.iter().cloned().fold(0.0, f64::max);
            let model = CouplingModel::new(coils, (lo, hi), cfg.dipole_beyond_diameters)?;
            for &fk in &freqs {
                let state = AntennaState::new(&model, fk)?;
                for z in [&state.z_bar, &state.z_full] {
                    sym = sym.max(linalg::symmetry_error(z));
                    pas = pas.max(-linalg::min_eigen_over_trace(&linalg::re(z)));
                }
            }
        }
        Ok((sym, pas))
    };
    match run() {
        Ok((sym, pas)) => vec![
            Check::new("reciprocity", sym, 1e-9 * scale, "max relative asymmetry"),
            Check::new("passivity", pas, 1e-12 * scale, "max -min eig(Re Z)/trace"),
        ],
        Err(e) => vec![Check::failed("reciprocity", &e), Check::failed("passivity", &e)],
    }
}

fn power_consistency(cases: usize, seed: u64, scale: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 50.0;
    let mut worst = 0.0f64;
    for trial in 0..cases {
        let n_t = 1 + trial % 3;
        let n_r = 1 + (trial / 3) % 3;
        let z_a = random_passive_impedance(&mut rng, n_t + n_r, 0.5);
        let z_t = random_passive_impedance(&mut rng, 2 * n_t, 0.1);
        let z_r = random_passive_impedance(&mut rng, 2 * n_r, 0.1);
        let x = CVector::from_fn(n_t, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let err = (|| {
            let z_a = PartitionedImpedance::new(z_a, n_t)?;
            let z_t = PartitionedImpedance::new(z_t, n_t)?;
            let z_r = PartitionedImpedance::new(z_r, n_r)?;
            power_consistency_error(&Chain { z_t: Some(&z_t), z_a: &z_a, z_r: Some(&z_r), r }, &x)
        })();
        match err {
            Ok(e) => worst = worst.max(e),
            Err(e) => return Check::failed("power consistency", e),
        }
    }
    Check::new("power consistency", worst, 1e-9 * scale, "max relative power error")
}

/// Port reduction of randomly placed sensor coils against a solve of the full network.
fn relay_reduction(cfg: &ScenarioConfig, cases: usize, seed: u64, scale: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let f = cfg.design_frequency_hz;
    let size = cfg.sensor.size_m;
    let mut worst = 0.0f64;
    for trial in 0..cases {
        let n = 3 + trial % 4;
        let n_ports = 1 + trial % (n - 1);
        let mut coils: Vec<CoilGeometry> = Vec::with_capacity(n);
        while coils.len() < n {
            let center = Vec3::from_fn(|_, _| rng.gen_range(-4.0..4.0) * size);
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let coil = CoilGeometry::sensor_solenoid(center, Vec3::from(axis), size, cfg.sensor.turns, cfg.sensor.spacing_factor);
            if coils.iter().all(|o| !coils_collide(o, &coil, 0.0)) {
                coils.push(coil);
            }
        }
        let terms: Vec<C64> = (0..n)
            .map(|_| c(rng.gen_range(0.0..5.0), rng.gen_range(-300.0..300.0)))
            .collect();
        let run = || -> Result<f64> {
            let model = CouplingModel::new(&coils, (f, f), cfg.dipole_beyond_diameters)?;
            let state = AntennaState::new(&model, f)?;
            let ports: Vec<usize> = (0..n_ports).collect();
            let reduced = state.reduce(&ports, &terms)?;
            let z_term = linalg::diag(&terms[n_ports..]);
            let schur = reduce_passive_relays(&state.z_full, n_ports, &z_term)?;
            // Direct: drive the ports with voltages, relays closed by their terminations.
            let mut full = state.z_full.clone();
            for i in n_ports..n {
                full[(i, i)] += terms[i];
            }
            let v = CMatrix::from_fn(n, 1, |i, _| if i < n_ports { c(1.0 + i as f64, -0.5) } else { c(0.0, 0.0) });
            let i_full = linalg::solve(&full, &v, "direct network solve")?;
            let v_p = linalg::block(&v, 0, 0, n_ports, 1);
            let i_red = linalg::solve(&reduced.z_a, &v_p, "reduced network solve")?;
            let i_direct = linalg::block(&i_full, 0, 0, n_ports, 1);
            Ok(linalg::rel_diff(&i_red, &i_direct).max(linalg::rel_diff(&schur, &reduced.z_a)))
        };
        match run() {
            Ok(e) => worst = worst.max(e),
            Err(e) => return Check::failed("relay reduction", e),
        }
    }
    Check::new("relay reduction", worst, 1e-10 * scale, "max relative port-current error")
}

/// Ideal multiport power and noise matches, and the lumped L and T designs.
fn matching(cfg: &ScenarioConfig, scale: f64) -> Vec<Check> {
    let f = cfg.design_frequency_hz;
    let r = cfg.reference_resistance_ohm;
    let ideal = || -> Result<(f64, f64)> {
        let external = build_external_array(&cfg.array)?;
        let s = &cfg.sensor;
        let sensor = CoilGeometry::sensor_solenoid(
            Vec3::new(0.0, 0.0, -s.depth_m),
            Vec3::new(0.3, 0.2, 1.0).normalize(),
            s.size_m,
            s.turns,
            s.spacing_factor,
        );
        let sensor_net = synthesize_l_network(CoilCircuit::evaluate(&sensor, f)?.port_impedance(), c(r, 0.0), f)?;
        let n = external.len();
        let mut coils = external;
        coils.push(sensor);
        let model = CouplingModel::new(&coils, (f, f), cfg.dipole_beyond_diameters)?;
        let z = AntennaState::new(&model, f)?.z_full;
        let sensor_stage = two_port_stage(std::slice::from_ref(&sensor_net), f, true)?;
        // Downlink: array transmits, the sensor receives through its L network.
        let z_a = PartitionedImpedance::new(z.clone(), n)?;
        let z_in = Chain { z_t: None, z_a: &z_a, z_r: Some(&sensor_stage), r }.input_impedances()?.a;
        let tx = two_port_stage(&[synthesize_power_match_multiport(&z_in, r, f)?], f, false)?;
        let got = Chain { z_t: Some(&tx), z_a: &z_a, z_r: Some(&sensor_stage), r }.input_impedances()?.t;
        let power_err = linalg::rel_diff(&got, &(CMatrix::identity(n, n) * c(r, 0.0)));
        // Uplink: the sensor transmits, the array receives through a noise match.
        let mut order: Vec<usize> = vec![n];
        order.extend(0..n);
        let z_up = CMatrix::from_fn(n + 1, n + 1, |i, j| z[(order[i], order[j])]);
        let z_a = PartitionedImpedance::new(z_up, 1)?;
        let sensor_tx = two_port_stage(&[sensor_net], f, false)?;
        let z_out = Chain { z_t: Some(&sensor_tx), z_a: &z_a, z_r: None, r }.output_impedances()?.a;
        let rx = two_port_stage(&[synthesize_noise_match_multiport(&z_out, &cfg.noise.lna, f)?], f, true)?;
        let got = Chain { z_t: Some(&sensor_tx), z_a: &z_a, z_r: Some(&rx), r }.output_impedances()?.r;
        let noise_err = linalg::rel_diff(&got, &(CMatrix::identity(n, n) * cfg.noise.lna.z_opt()));
        Ok((power_err, noise_err))
    };
    let lumped = || -> Result<(f64, f64)> {
        let s = &cfg.sensor;
        let sensor = CoilGeometry::sensor_solenoid(Vec3::zeros(), Vec3::z(), s.size_m, s.turns, s.spacing_factor);
        let external = build_external_array(&cfg.array)?;
        let cases = [
            (CoilCircuit::evaluate(&sensor, f)?.port_impedance(), c(r, 0.0)),
            (CoilCircuit::evaluate(&external[0], f)?.port_impedance(), cfg.noise.lna.z_opt().conj()),
        ];
        let (mut hit, mut detune) = (0.0f64, f64::INFINITY);
        for (load, target) in cases {
            let want = target.conj();
            let l = synthesize_l_network(load, target, f)?;
            let t = LumpedNetwork::from_reactances(Topology::T, &t_start_from_l(&l), f)?;
            for net in [&l, &t] {
                hit = hit.max((net.presented_impedance(load, f)? - want).norm() / want.norm());
                let off = net.presented_impedance(load, 1.05 * f)?;
                detune = detune.min(((off - want) / (off + want.conj())).norm());
            }
        }
        Ok((hit, detune))
    };
    let mut out = Vec::new();
    match ideal() {
        Ok((p, nm)) => {
            out.push(Check::new("ideal power match", p, 1e-8 * scale, "relative error of Z_T^in - R I"));
            out.push(Check::new("ideal noise match", nm, 1e-8 * scale, "relative error of Z_R^out - Z_opt I"));
        }
        Err(e) => {
            out.push(Check::failed("ideal power match", &e));
            out.push(Check::failed("ideal noise match", &e));
        }
    }
    match lumped() {
        Ok((hit, detune)) => {
            out.push(Check::new("lumped match at design", hit, 1e-6 * scale, "max relative target error"));
            out.push(Check {
                name: "lumped match detunes",
                passed: detune > 0.1,
                detail: format!("min |reflection| at +5% frequency {detune:.3e} (must exceed 0.1)"),
            });
        }
        Err(e) => {
            out.push(Check::failed("lumped match at design", &e));
            out.push(Check::failed("lumped match detunes", &e));
        }
    }
    out
}

fn waterfilling(cases: usize, seed: u64, scale: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11c);
    let (mut worst, mut deficit) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = rng.gen_range(1..40);
        let gains: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0))).collect();
        let p = 10f64.powf(rng.gen_range(-3.0..1.0));
        let wf = match waterfill(&gains, p, 1.0) {
            Ok(v) => v,
            Err(e) => return Check::failed("waterfilling", e),
        };
        let flat = match flat_allocation(&gains, &vec![true; n], p, 1.0) {
            Ok(v) => v,
            Err(e) => return Check::failed("waterfilling", e),
        };
        let power: Vec<f64> = wf.per_bin_power.iter().map(|v| v[0]).collect();
        worst = worst.max(waterfill_kkt_residual(&gains, &power));
        deficit = deficit.max((flat.total_rate - wf.total_rate) / flat.total_rate.max(f64::MIN_POSITIVE));
    }
    let mut check = Check::new("waterfilling", worst, 1e-9 * scale, "max KKT residual");
    if deficit > 1e-12 {
        check.passed = false;
    }
    check.detail.push_str(&format!("; max flat-over-waterfill excess {deficit:.3e}"));
    check
}

/// Runs every check; tolerances scale with `validate.tolerance` (default 1e-9).
pub fn run_checks(cfg: &ScenarioConfig) -> Vec<Check> {
    let scale = cfg.validate.tolerance / 1e-9;
    let cases = cfg.validate.random_cases;
    let mut checks = reciprocity_passivity(cfg, scale);
    checks.push(power_consistency(cases, cfg.seed, scale));
    checks.push(relay_reduction(cfg, cases.div_ceil(2), cfg.seed, scale));
    checks.extend(matching(cfg, scale));
    checks.push(waterfilling(10 * cases, cfg.seed, scale));
    checks
}
