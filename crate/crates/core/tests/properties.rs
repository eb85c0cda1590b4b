use mimi_core::coil_models::CoilGeometry;
use mimi_core::coupling::{mutual_impedance_integral, reduce_passive_relays, CoilPose};
use mimi_core::experiments::validate::{power_consistency_error, random_passive_impedance};
use mimi_core::link::{flat_allocation, waterfill, waterfill_kkt_residual};
use mimi_core::multiport::{Chain, PartitionedImpedance};
use mimi_core::{CMatrix, CVector, Vec3, C64};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F: f64 = 750e6;

fn unit(v: [f64; 3]) -> Option<Vec3> {
    let v = Vec3::from(v);
    (v.norm() > 0.1).then(|| v.normalize())
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

fn loop_at(center: Vec3, axis: Vec3) -> CoilPose {
    CoilPose::new(CoilGeometry::single_turn(center, axis, 0.0159, 1.5e-3)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Mutual impedance is reciprocal and invariant under rigid motions of the pair.
    #[test]
    fn mutual_impedance_is_reciprocal_and_frame_free(
        a in vec3(), b in vec3(), offset in vec3(), rot_axis in vec3(), angle in 0.0..std::f64::consts::TAU, shift in vec3(),
    ) {
        let (Some(a), Some(b), Some(rot_axis)) = (unit(a), unit(b), unit(rot_axis)) else {
            return Ok(());
        };
        let d = Vec3::from(offset) * 0.1;
        prop_assume!(d.norm() > 0.045);
        let z_ab = mutual_impedance_integral(&loop_at(Vec3::zeros(), a), &loop_at(d, b), F).unwrap();
        let z_ba = mutual_impedance_integral(&loop_at(d, b), &loop_at(Vec3::zeros(), a), F).unwrap();
        prop_assert!((z_ab - z_ba).norm() <= 1e-9 * z_ab.norm().max(1e-9));

        let r = Rotation3::from_axis_angle(&Unit::new_normalize(rot_axis), angle);
        let t = Vec3::from(shift) * 0.2;
        let z_moved = mutual_impedance_integral(&loop_at(t, r * a), &loop_at(r * d + t, r * b), F).unwrap();
        let scale = z_ab.norm().max(1e-4);
        prop_assert!((z_moved - z_ab).norm() <= 1e-6 * scale, "{z_ab} vs {z_moved}");
    }

    /// The channel matrix reproduces delivered and received power of a circuit solve.
    #[test]
    fn power_consistency_on_random_chains(seed in any::<u64>(), n_t in 1usize..4, n_r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z_a = PartitionedImpedance::new(random_passive_impedance(&mut rng, n_t + n_r, 0.5), n_t).unwrap();
        let z_t = PartitionedImpedance::new(random_passive_impedance(&mut rng, 2 * n_t, 0.1), n_t).unwrap();
        let z_r = PartitionedImpedance::new(random_passive_impedance(&mut rng, 2 * n_r, 0.1), n_r).unwrap();
        let chain = Chain { z_t: Some(&z_t), z_a: &z_a, z_r: Some(&z_r), r: 50.0 };
        let x = CVector::from_fn(n_t, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let err = power_consistency_error(&chain, &x).unwrap();
        prop_assert!(err < 1e-9, "{err}");
    }

    /// Eliminating relays does not depend on their order.
    #[test]
    fn relay_order_is_irrelevant(seed in any::<u64>(), n_active in 1usize..3, n_relay in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_active + n_relay;
        let z = random_passive_impedance(&mut rng, n, 0.3);
        let term = CMatrix::from_fn(n_relay, n_relay, |i, j| {
            if i == j { C64::new(rng.gen_range(0.0..2.0), rng.gen_range(-50.0..50.0)) } else { C64::new(0.0, 0.0) }
        });
        let a = reduce_passive_relays(&z, n_active, &term).unwrap();
        // Reverse the relay block.
        let perm: Vec<usize> = (0..n_active).chain((n_active..n).rev()).collect();
        let zp = CMatrix::from_fn(n, n, |i, j| z[(perm[i], perm[j])]);
        let tp = CMatrix::from_fn(n_relay, n_relay, |i, j| term[(n_relay - 1 - i, n_relay - 1 - j)]);
        let b = reduce_passive_relays(&zp, n_active, &tp).unwrap();
        prop_assert!((&a - &b).norm() <= 1e-10 * a.norm());
        // The reduced network stays passive.
        let eig = nalgebra::SymmetricEigen::new(a.map(|v| v.re)).eigenvalues;
        prop_assert!(eig.min() >= -1e-12 * eig.iter().map(|v| v.abs()).sum::<f64>());
    }

    /// Waterfilling spends the budget, satisfies KKT and never loses to a flat allocation.
    #[test]
    fn waterfilling_dominates_flat(gains in prop::collection::vec(0.0..1e6f64, 1..40), p in 1e-9..1e-3f64) {
        prop_assume!(gains.iter().any(|g| *g > 0.0));
        let wf = waterfill(&gains, p, 1e5).unwrap();
        let power: Vec<f64> = wf.per_bin_power.iter().map(|v| v[0]).collect();
        prop_assert!((power.iter().sum::<f64>() - p).abs() <= 1e-9 * p);
        prop_assert!(waterfill_kkt_residual(&gains, &power) < 1e-9);
        let flat = flat_allocation(&gains, &vec![true; gains.len()], p, 1e5).unwrap();
        prop_assert!(wf.total_rate >= flat.total_rate * (1.0 - 1e-12));
        let more = waterfill(&gains, 2.0 * p, 1e5).unwrap();
        prop_assert!(more.total_rate >= wf.total_rate);
    }
}
