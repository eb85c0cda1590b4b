//! Ideal (lossless multiport) power and noise matching, and the alternating Tx/Rx heuristic.

use serde::{Deserialize, Serialize};

use super::lumped::LumpedNetwork;
use super::{Chain, PartitionedImpedance};
use crate::error::{domain, Result};
use crate::linalg::{self, J};
use crate::{CMatrix, C64};

/// Two-source LNA noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LnaNoiseParams {
    /// Current-noise spectral density `E|i_N|^2` (A²/Hz).
    pub beta: f64,
    /// `sqrt(E|v_N|^2 / beta)` (ohm).
    pub noise_resistance: f64,
    /// `E[v_N i_N^*] / (beta R_N)`, stored as `[re, im]`.
    pub correlation: [f64; 2],
    /// Equivalent input variance of noise added after the LNA (V²).
    pub iid_variance: f64,
}

impl Default for LnaNoiseParams {
    fn default() -> Self {
        Self {
            beta: 5e-23,
            noise_resistance: 50.0,
            correlation: [0.5, 0.3],
            iid_variance: 0.0,
        }
    }
}

impl LnaNoiseParams {
    pub fn rho(&self) -> C64 {
        C64::new(self.correlation[0], self.correlation[1])
    }

    /// Noise-optimal source impedance `R_N (sqrt(1 - Im(rho)^2) + j Im(rho))`.
    pub fn z_opt(&self) -> C64 {
        let im = self.correlation[1];
        C64::new(self.noise_resistance * (1.0 - im * im).sqrt(), self.noise_resistance * im)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return domain(format!("LNA beta must be non-negative (got {})", self.beta));
        }
        if !(self.noise_resistance > 0.0) {
            return domain("LNA noise resistance must be positive");
        }
        if self.rho().norm() > 1.0 + 1e-12 {
            return domain(format!("|rho| = {} exceeds 1", self.rho().norm()));
        }
        if !(self.iid_variance >= 0.0) {
            return domain("iid noise variance must be non-negative");
        }
        Ok(())
    }
}

/// Blocks of the lossless network that presents `z_present * I` on one side while the
/// other side is terminated in `z_port`: `(port block, cross, presented-side block)`.
///
/// Port block `-j Im Z_port`, presented block `j Im(z_present) I`, cross
/// `j (Re z_present)^{1/2} (Re Z_port)^{1/2}` with principal square roots.
pub fn ideal_match_blocks(z_port: &CMatrix, z_present: C64) -> Result<(CMatrix, CMatrix, CMatrix)> {
    let n = z_port.nrows();
    if z_port.ncols() != n {
        return domain("matching target must be square");
    }
    if !(z_present.re > 0.0) {
        return domain(format!("presented impedance {z_present} must have positive real part"));
    }
    let root = linalg::hermitian_pow(&linalg::re(z_port), 0.5, "Re{Z} of the matched port")?;
    let port_block = linalg::im(z_port) * (-J);
    let cross = root * (J * z_present.re.sqrt());
    let present_block = CMatrix::identity(n, n) * C64::new(0.0, z_present.im);
    let cross = (&cross + cross.transpose()).scale(0.5);
    Ok((port_block, cross, present_block))
}

/// Tx power match: the network (generator ports first) with `Z_T^in = R I` and
/// `Z_T^out = conj(Z_in)` when its antenna side sees `Z_in`.
pub fn synthesize_power_match_multiport(z_in: &CMatrix, r: f64, f_design: f64) -> Result<LumpedNetwork> {
    let (port, cross, present) = ideal_match_blocks(z_in, C64::new(r, 0.0))?;
    let stage = PartitionedImpedance::from_blocks(&present, &cross, &port)?;
    Ok(LumpedNetwork::ideal(stage, f_design))
}

/// Rx noise match: the network (LNA ports first) presenting `Z_opt I` to every LNA when
/// its coil side sees `Z_out`.
pub fn synthesize_noise_match_multiport(
    z_out: &CMatrix,
    lna: &LnaNoiseParams,
    f_design: f64,
) -> Result<LumpedNetwork> {
    lna.validate()?;
    let (port, cross, present) = ideal_match_blocks(z_out, lna.z_opt())?;
    let stage = PartitionedImpedance::from_blocks(&present, &cross, &port)?;
    Ok(LumpedNetwork::ideal(stage, f_design))
}

/// What the Rx matching network should present to its loads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RxGoal {
    /// Conjugate (power) match to the reference impedance.
    Power,
    /// Present this impedance (the LNA `Z_opt`).
    Present(C64),
}

#[derive(Debug, Clone)]
pub struct AlternatingMatch {
    /// Tx stage, generator ports in front.
    pub z_t: PartitionedImpedance,
    /// Rx stage, coil ports in front.
    pub z_r: PartitionedImpedance,
    pub converged: bool,
    pub iterations: usize,
    /// Relative target movement per iteration.
    pub history: Vec<f64>,
}

fn rx_stage(z_out: &CMatrix, goal: RxGoal, r: f64) -> Result<PartitionedImpedance> {
    let present = match goal {
        RxGoal::Power => C64::new(r, 0.0),
        RxGoal::Present(z) => z,
    };
    let (port, cross, present_block) = ideal_match_blocks(z_out, present)?;
    PartitionedImpedance::from_blocks(&port, &cross.transpose(), &present_block)
}

fn tx_stage(z_in: &CMatrix, r: f64) -> Result<PartitionedImpedance> {
    let (port, cross, present) = ideal_match_blocks(z_in, C64::new(r, 0.0))?;
    PartitionedImpedance::from_blocks(&present, &cross, &port)
}

/// Matches Tx and Rx alternately until the impedances each side is matched against settle.
///
/// The first designs ignore far-side loading (`Z_A:T`, `Z_A:R`). Each iteration re-matches
/// the Tx side against `Z_A^in` and then the Rx side against `Z_A^out`.
pub fn alternating_match(
    z_a: &PartitionedImpedance,
    r: f64,
    goal: RxGoal,
    max_iters: usize,
    tol: f64,
) -> Result<AlternatingMatch> {
    let mut z_t = tx_stage(&z_a.front(), r)?;
    let mut z_r = rx_stage(&z_a.back(), goal, r)?;
    let mut prev_in = z_a.front();
    let mut prev_out = z_a.back();
    let mut history = Vec::new();
    let mut growing = 0;
    for it in 1..=max_iters.max(1) {
        let chain = Chain { z_t: Some(&z_t), z_a, z_r: Some(&z_r), r };
        let z_in = chain.input_impedances()?.a;
        z_t = tx_stage(&z_in, r)?;
        let chain = Chain { z_t: Some(&z_t), z_a, z_r: Some(&z_r), r };
        let z_out = chain.output_impedances()?.a;
        z_r = rx_stage(&z_out, goal, r)?;
        let err = linalg::rel_diff(&z_in, &prev_in).max(linalg::rel_diff(&z_out, &prev_out));
        if history.last().is_some_and(|&last: &f64| err > last) {
            growing += 1;
        } else {
            growing = 0;
        }
        history.push(err);
        prev_in = z_in;
        prev_out = z_out;
        if err < tol {
            return Ok(AlternatingMatch { z_t, z_r, converged: true, iterations: it, history });
        }
        if growing >= 3 {
            log::warn!("alternating match diverging: {history:?}");
            break;
        }
    }
    let iterations = history.len();
    Ok(AlternatingMatch { z_t, z_r, converged: false, iterations, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiport::{input_impedances, output_impedances};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn paper_lna_optimum() {
        let z = LnaNoiseParams::default().z_opt();
        assert!((z.re - 50.0 * 0.91f64.sqrt()).abs() < 1e-12);
        assert!((z.im - 15.0).abs() < 1e-12);
        assert!((z.re - 47.70).abs() < 5e-3);
        let real = LnaNoiseParams { correlation: [0.4, 0.0], ..Default::default() };
        assert_eq!(real.z_opt(), c(50.0, 0.0));
    }

    #[test]
    fn power_match_of_matched_port_is_a_plain_transformer() {
        let z = CMatrix::from_element(1, 1, c(50.0, 0.0));
        let net = synthesize_power_match_multiport(&z, 50.0, 1e9).unwrap();
        let m = &net.ideal.as_ref().unwrap().matrix;
        assert!(m[(0, 0)].norm() < 1e-12 && m[(1, 1)].norm() < 1e-12);
        assert!((m[(0, 1)] - c(0.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn scalar_power_match_presents_reference() {
        let z_in = c(10.0, 50.0);
        let net = synthesize_power_match_multiport(&CMatrix::from_element(1, 1, z_in), 50.0, 1e9).unwrap();
        let zt = net.ideal.unwrap();
        let za = PartitionedImpedance::from_blocks(
            &CMatrix::from_element(1, 1, z_in),
            &CMatrix::from_element(1, 1, c(0.0, 0.0)),
            &CMatrix::from_element(1, 1, c(1.0, 0.0)),
        )
        .unwrap();
        let inp = input_impedances(Some(&zt), &za, None, 50.0).unwrap();
        assert!((inp.t[(0, 0)] - 50.0).norm() < 1e-10);
        let out = output_impedances(Some(&zt), &za, None, 50.0).unwrap();
        assert!((out.t[(0, 0)] - z_in.conj()).norm() < 1e-10);
    }

    fn coupled_array() -> CMatrix {
        CMatrix::from_row_slice(
            3,
            3,
            &[
                c(2.0, 40.0), c(0.3, 5.0), c(0.1, -2.0),
                c(0.3, 5.0), c(1.5, 35.0), c(0.2, 3.0),
                c(0.1, -2.0), c(0.2, 3.0), c(1.8, 50.0),
            ],
        )
    }

    #[test]
    fn multiport_matches_hit_their_targets() {
        let z = coupled_array();
        let lna = LnaNoiseParams::default();
        let rx = synthesize_noise_match_multiport(&z, &lna, 1e9).unwrap();
        let stage = rx.ideal.unwrap();
        let m = &stage.matrix;
        assert!(m.iter().all(|v| v.re.abs() < 1e-10 * m.norm()));
        assert!(linalg::symmetry_error(m) < 1e-10);
        // Coil side sees Z, LNA side must see Z_opt I.
        let z_out = stage.front_impedance(&z, "t").unwrap();
        let target = CMatrix::identity(3, 3) * lna.z_opt();
        assert!((z_out - target).norm() < 1e-8 * 50.0);
        let tx = synthesize_power_match_multiport(&z, 50.0, 1e9).unwrap().ideal.unwrap();
        let z_in = tx.front_impedance(&z, "t").unwrap();
        assert!((z_in - CMatrix::identity(3, 3) * c(50.0, 0.0)).norm() < 1e-8 * 50.0);
    }

    #[test]
    fn non_passive_target_is_rejected() {
        let z = CMatrix::from_element(1, 1, c(-1.0, 3.0));
        assert!(synthesize_power_match_multiport(&z, 50.0, 1e9).is_err());
    }

    fn two_coil(k: C64) -> PartitionedImpedance {
        PartitionedImpedance::from_blocks(
            &CMatrix::from_element(1, 1, c(1.0, 80.0)),
            &CMatrix::from_element(1, 1, k),
            &CMatrix::from_element(1, 1, c(1.0, 80.0)),
        )
        .unwrap()
    }

    #[test]
    fn weak_coupling_converges_immediately() {
        let res = alternating_match(&two_coil(c(1e-6, 1e-4)), 50.0, RxGoal::Power, 10, 1e-4).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn symmetric_pair_gives_mirrored_matches() {
        let res = alternating_match(&two_coil(c(0.05, 20.0)), 50.0, RxGoal::Power, 400, 1e-11).unwrap();
        assert!(res.converged, "{:?}", res.history);
        assert!(linalg::rel_diff(&res.z_r.matrix, &res.z_t.flipped().matrix) < 1e-8);
    }
}
