//! Passive relay physics on small coil networks.

use mimi_core::coil_models::{CoilCircuit, CoilGeometry};
use mimi_core::coupling::{reduce_passive_relays, resonance_capacitance, AntennaState, CouplingModel};
use mimi_core::{omega, CMatrix, Vec3, C64};

const F: f64 = 750e6;

fn solenoid(z: f64) -> CoilGeometry {
    CoilGeometry::sensor_solenoid(Vec3::new(0.0, 0.0, z), Vec3::z(), 350e-6, 5, 1.5)
}

/// Transmitter and receiver 1.6 mm apart on a common axis, relay half way.
fn state() -> AntennaState {
    let coils = [solenoid(0.0), solenoid(1.6e-3), solenoid(0.8e-3)];
    let model = CouplingModel::new(&coils, (0.9 * F, 1.1 * F), 10.0).unwrap();
    AntennaState::new(&model, F).unwrap()
}

fn capacitor(c: f64) -> CMatrix {
    CMatrix::from_element(1, 1, C64::new(0.0, -1.0 / (omega(F) * c)))
}

fn transfer(z: &CMatrix) -> f64 {
    z[(0, 1)].norm()
}

#[test]
fn resonant_relay_boosts_coupling_and_detuned_relay_vanishes() {
    let s = state();
    let bare = s.z_full.view((0, 0), (2, 2)).into_owned();
    let port = CoilCircuit::evaluate(&solenoid(0.0), F).unwrap().port_impedance();
    let c_res = resonance_capacitance(port.im / omega(F), F);

    let resonant = reduce_passive_relays(&s.z_full, 2, &capacitor(c_res)).unwrap();
    assert!(transfer(&resonant) > 2.0 * transfer(&bare), "{} vs {}", transfer(&resonant), transfer(&bare));

    // A tiny capacitor is almost an open circuit: the relay disappears.
    let detuned = reduce_passive_relays(&s.z_full, 2, &capacitor(c_res * 1e-6)).unwrap();
    let diff = (&detuned - &bare).norm() / bare.norm();
    assert!(diff < 1e-4, "{diff}");

    // Half-way detuning lies in between.
    let half = reduce_passive_relays(&s.z_full, 2, &capacitor(0.5 * c_res)).unwrap();
    assert!(transfer(&half) < transfer(&resonant));
}

#[test]
fn antenna_state_reduction_matches_schur_complement() {
    let s = state();
    let port = CoilCircuit::evaluate(&solenoid(0.0), F).unwrap().port_impedance();
    let z_c = capacitor(resonance_capacitance(port.im / omega(F), F))[(0, 0)];
    let terms = [C64::new(0.0, 0.0), C64::new(0.0, 0.0), z_c];
    let red = s.reduce(&[0, 1], &terms).unwrap();
    let direct = reduce_passive_relays(&s.z_full, 2, &CMatrix::from_element(1, 1, z_c)).unwrap();
    assert!((&red.z_a - &direct).norm() < 1e-12 * direct.norm());

    // Port order is respected.
    let swapped = s.reduce(&[1, 0], &terms).unwrap();
    assert!((swapped.z_a[(0, 0)] - red.z_a[(1, 1)]).norm() < 1e-12 * red.z_a[(1, 1)].norm());
}
