use std::sync::OnceLock;

use super::*;
use crate::linalg;

fn scenario() -> &'static Scenario {
    static SCN: OnceLock<Scenario> = OnceLock::new();
    SCN.get_or_init(|| Scenario::prepare(&ScenarioConfig::default()).expect("default scenario"))
}

#[test]
fn external_array_layout() {
    let coils = build_external_array(&ArrayConfig::default()).unwrap();
    assert_eq!(coils.len(), 21);
    for (i, a) in coils.iter().enumerate() {
        assert!((a.axis_vec().norm() - 1.0).abs() < 1e-12);
        // Every axis points into the body.
        assert!(a.axis_vec().z < 0.0);
        for b in &coils[..i] {
            assert!(!coils_collide(a, b, 0.0));
        }
    }
    // The axes span all three directions.
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    for c in &coils {
        m += c.axis_vec() * c.axis_vec().transpose();
    }
    let eig = m.symmetric_eigenvalues();
    assert!(eig.min() > 0.05 * eig.max(), "axis spread {eig:?}");
}

#[test]
fn overlapping_rings_are_rejected() {
    let cfg = ArrayConfig {
        inner_ring_radius_m: 0.02,
        ..ArrayConfig::default()
    };
    assert!(matches!(build_external_array(&cfg), Err(Error::Domain(_))));
}

#[test]
fn array_impedance_is_reciprocal_passive_and_invertible() {
    let scn = scenario();
    let f = scn.config.design_frequency_hz;
    let circuits = scn.array_model.circuits(f).unwrap();
    let z = scn.array_model.z_bar(f, &circuits).unwrap();
    let asym = (&z - z.transpose()).norm() / z.norm();
    assert!(asym < 1e-12, "asymmetry {asym}");
    let (eig, _) = linalg::hermitian_eigen(&linalg::re(&z));
    assert!(eig.iter().all(|&e| e > 0.0), "{eig:?}");
    let inv = linalg::inverse(&z, "array").unwrap();
    let cond = z.norm() * inv.norm();
    assert!(cond.is_finite() && cond < 1e8, "condition {cond}");
}

#[test]
fn segment_distance_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = || Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    for case in 0..200 {
        let (p0, p1, q0, q1) = (p(), p(), p(), p());
        // Degenerate (point) segments now and then.
        let p1 = if case % 17 == 0 { p0 } else { p1 };
        let d = segment_distance(p0, p1, q0, q1);
        let n = 400;
        let mut brute = f64::INFINITY;
        for i in 0..=n {
            let a = p0 + (p1 - p0) * (i as f64 / n as f64);
            // Exact distance from a point to segment q.
            let e = q1 - q0;
            let t = if e.norm_squared() > 0.0 { ((a - q0).dot(&e) / e.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
            brute = brute.min((a - (q0 + e * t)).norm());
        }
        assert!(d <= brute + 1e-12, "case {case}: {d} > {brute}");
        assert!(brute - d < 1e-2 * (p1 - p0).norm() + 1e-12, "case {case}: {d} vs {brute}");
    }
}

#[test]
fn collision_of_solenoids() {
    let t = CoilGeometry::sensor_solenoid(Vec3::zeros(), Vec3::z(), 350e-6, 5, 1.5);
    let side = |x: f64| t.with_pose(Vec3::new(x, 0.0, 0.0), Vec3::z());
    let outer = 2.0 * (t.loop_radius + t.wire_radius);
    assert!(coils_collide(&t, &side(0.99 * outer), 0.0));
    assert!(!coils_collide(&t, &side(1.01 * outer), 0.0));
    assert!(coils_collide(&t, &side(1.05 * outer), 0.1));
    // Stacked on the axis: the capsule caps add one radius at each end.
    let h = t.height() + 2.0 * t.wire_radius + outer;
    assert!(coils_collide(&t, &t.with_pose(Vec3::new(0.0, 0.0, 0.99 * h), Vec3::z()), 0.0));
    assert!(!coils_collide(&t, &t.with_pose(Vec3::new(0.0, 0.0, 1.01 * h), Vec3::z()), 0.0));
}

fn template() -> CoilGeometry {
    CoilGeometry::sensor_solenoid(Vec3::zeros(), Vec3::z(), 350e-6, 5, 1.5)
}

#[test]
fn swarm_is_deterministic_per_stream_and_collision_free() {
    let swarm = SwarmConfig::default();
    let anchor = Vec3::new(0.0, 0.0, -0.12);
    let draw = |i| sample_swarm(15, 2, anchor, &template(), &swarm, &mut child_rng(7, i)).unwrap();
    let (s0, r0) = draw(4);
    let (s1, r1) = draw(4);
    assert_eq!(s0, s1);
    assert_eq!(r0, r1);
    let (_, r2) = draw(5);
    assert_ne!(r0, r2);
    assert_eq!(s0.len(), 2);
    assert_eq!(r0.len(), 15);
    assert_eq!(s0[0].center_vec(), anchor);
    let all: Vec<&CoilGeometry> = s0.iter().chain(&r0).collect();
    for i in 0..all.len() {
        for j in 0..i {
            assert!(!coils_collide(all[i], all[j], swarm.collision_margin));
        }
    }
}

#[test]
fn swarm_spread_follows_sigma() {
    let swarm = SwarmConfig::default();
    let t = template();
    let sigma = swarm.sigma_sizes * t.diameter().max(t.height());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 3000;
    let mut sum = 0.0;
    for _ in 0..n {
        let (_, r) = sample_swarm(1, 0, Vec3::zeros(), &t, &swarm, &mut rng).unwrap();
        sum += r[0].center_vec().norm_squared();
    }
    let var = sum / (3 * n) as f64;
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.1, "variance ratio {}", var / (sigma * sigma));
}

#[test]
fn zero_spread_cannot_place_two_coils() {
    let swarm = SwarmConfig {
        sigma_sizes: 0.0,
        max_attempts: 50,
        ..SwarmConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (s, _) = sample_swarm(0, 1, Vec3::zeros(), &template(), &swarm, &mut rng).unwrap();
    assert_eq!(s[0].center_vec(), Vec3::zeros());
    assert!(matches!(
        sample_swarm(1, 1, Vec3::zeros(), &template(), &swarm, &mut rng),
        Err(Error::Sampling(_))
    ));
    assert!(sample_swarm(0, 0, Vec3::zeros(), &template(), &swarm, &mut rng).is_err());
}

#[test]
fn orientation_set_is_spread_over_the_sphere() {
    let dirs = orientation_set(40);
    assert_eq!(dirs.len(), 43);
    assert!(dirs.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
    let mean: Vec3 = dirs[..40].iter().sum::<Vec3>() / 40.0;
    assert!(mean.norm() < 0.05);
    assert_eq!(dirs[42], Vec3::z());
}

#[test]
fn log_space_endpoints() {
    let g = log_space(100e-6, 400e-6, 7);
    assert_eq!(g.len(), 7);
    assert!((g[0] - 100e-6).abs() < 1e-18 && (g[6] - 400e-6).abs() < 1e-18);
    assert!((g[3] - 200e-6).abs() < 1e-15);
    assert_eq!(log_space(5.0, 9.0, 1), vec![5.0]);
}

#[test]
fn half_power_band_of_a_lorentzian() {
    let (f0, gamma) = (750e6, 2e6);
    let freqs: Vec<f64> = (0..2001).map(|i| 730e6 + 20e3 * i as f64).collect();
    let gain: Vec<f64> = freqs.iter().map(|f| 3.0 / (1.0 + ((f - f0) / gamma).powi(2))).collect();
    let (lo, hi) = half_power_band(&freqs, &gain).unwrap();
    assert!((lo - (f0 - gamma)).abs() < 1e3, "{lo}");
    assert!((hi - (f0 + gamma)).abs() < 1e3, "{hi}");
    // Band running off the grid.
    assert!(half_power_band(&freqs[..1000], &gain[..1000]).is_err());
}

#[test]
fn prepared_grids() {
    let scn = scenario();
    let f = scn.config.design_frequency_hz;
    assert_eq!(scn.n_external(), 21);
    assert_eq!(scn.array_match.len(), 21);
    let t = &scn.tuning_grid;
    assert_eq!(t.len(), 51);
    assert!((t[25] - f).abs() < 1e-3);
    let g = &scn.rate_grid;
    assert_eq!(g.centers.len(), g.band.len());
    let in_band = g.band.iter().filter(|b| **b).count();
    assert!(in_band > 0 && in_band < g.centers.len());
    for w in g.centers.windows(2) {
        assert!((w[1] - w[0] - g.bin_width).abs() < 1e-3);
    }
    // The band is contiguous.
    let first = g.band.iter().position(|b| *b).unwrap();
    assert!(g.band[first..first + in_band].iter().all(|b| *b));
    // The rate grid fits inside the coupling model's band.
    let (lo, hi) = scn.array_model.band();
    assert!(g.centers[0] - 0.5 * g.bin_width >= lo && *g.centers.last().unwrap() + 0.5 * g.bin_width <= hi);
}

#[test]
fn realizations_are_reproducible_and_elaborate_receives_more() {
    let scn = scenario();
    let mc = &scn.config.relay_cdf;
    for i in 0..3 {
        let a = scn.realization(MonteCarloKind::Relay, mc, 5, i).unwrap();
        let b = scn.realization(MonteCarloKind::Relay, mc, 5, i).unwrap();
        assert_eq!(a, b);
        // The elaborate scheme searches a frequency grid containing the design
        // frequency with a match that is optimal there.
        assert!(a.elaborate.received_power >= a.simple.received_power * (1.0 - 1e-9));
        for o in [&a.simple, &a.elaborate, &a.reference] {
            assert_eq!(o.outage, o.rate == 0.0);
            assert!(o.rate >= 0.0 && o.received_power > 0.0);
        }
    }
}
