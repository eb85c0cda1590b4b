//! Power-consistent MIMO channel, receiver noise covariance and broadband bins.
//!
//! The transmit signal is `x = (Re Z_T^in)^{1/2} i_G`, so `|x|^2` is the active
//! power delivered by the generators, and the receive signal is the power wave
//! `y = v_L / sqrt(R)`. The channel is then
//! `H = D (Z_T^in + R I) (Re Z_T^in)^{-1/2} / sqrt(R)`.
//!
//! Noise is propagated source by source to the Rx matching outputs: a series EMF for
//! the ohmic and radiation resistance of every coil (radiation noise correlated
//! through `Phi`), the generator resistors, any resistive port termination, and the
//! two-source LNA model.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coil_models::{CoilCircuit, CoilGeometry};
use crate::coupling::{AntennaState, CouplingModel, ReducedAntenna};
use crate::error::{domain, Result};
use crate::linalg::{self, solve};
use crate::multiport::{
    alternating_match, synthesize_noise_match_multiport, synthesize_power_match_multiport,
    two_port_stage, Chain, ChainAnalysis, LnaNoiseParams, LumpedNetwork, PartitionedImpedance,
    RxGoal,
};
use crate::{omega, wavenumber, CMatrix, C64, BOLTZMANN};

/// Tolerance for clipping negative noise-covariance eigenvalues (relative to trace).
pub const PSD_TOLERANCE: f64 = 1e-12;

/// One frequency bin `y_k = H_k x_k + n_k`.
#[derive(Debug, Clone)]
pub struct NarrowbandChannel {
    /// `H` (N_R x N_T), power-wave normalized.
    pub h_matrix: CMatrix,
    /// `K` (W), Hermitian PSD. Zero when noise was not requested.
    pub noise_cov: CMatrix,
    pub center_frequency: f64,
    pub bandwidth: f64,
    /// Generator-side input impedance `Z_T^in`, needed for per-generator power.
    pub z_t_in: CMatrix,
}

/// Spatial correlation of the extrinsic (radiation) noise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialCorrelation {
    /// `Phi_mn = J0(k d_mn) o_m . o_n`.
    #[default]
    Bessel,
    /// Uncorrelated.
    Identity,
    /// Given matrix over all coils (tests and studies).
    #[serde(skip)]
    Explicit(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseEnvironment {
    /// `T_A` (K).
    pub antenna_temperature: f64,
    /// Physical temperature `T` of all resistive parts (K).
    pub physical_temperature: f64,
    pub spatial_correlation: SpatialCorrelation,
    pub lna: LnaNoiseParams,
}

impl Default for NoiseEnvironment {
    fn default() -> Self {
        Self {
            antenna_temperature: 310.0,
            physical_temperature: 310.0,
            spatial_correlation: SpatialCorrelation::Bessel,
            lna: LnaNoiseParams::default(),
        }
    }
}

impl NoiseEnvironment {
    /// No noise at all; useful as a base for single-source studies.
    pub fn silent() -> Self {
        Self {
            antenna_temperature: 0.0,
            physical_temperature: 0.0,
            spatial_correlation: SpatialCorrelation::Identity,
            lna: LnaNoiseParams {
                beta: 0.0,
                iid_variance: 0.0,
                ..LnaNoiseParams::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.antenna_temperature >= 0.0 && self.physical_temperature >= 0.0) {
            return domain("noise temperatures must be non-negative");
        }
        self.lna.validate()
    }

    /// `Phi` over `coils` at frequency `f`.
    pub fn correlation_matrix(&self, coils: &[CoilGeometry], f: f64) -> Result<DMatrix<f64>> {
        let n = coils.len();
        let phi = match &self.spatial_correlation {
            SpatialCorrelation::Bessel => bessel_correlation(coils, f),
            SpatialCorrelation::Identity => DMatrix::identity(n, n),
            SpatialCorrelation::Explicit(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return domain(format!(
                        "explicit correlation is {}x{}, system has {n} coils",
                        m.nrows(),
                        m.ncols()
                    ));
                }
                m.clone()
            }
        };
        Ok(phi)
    }
}

/// `Phi_mn = J0(k d_mn) o_m . o_n` (unit diagonal).
pub fn bessel_correlation(coils: &[CoilGeometry], f: f64) -> DMatrix<f64> {
    let k = wavenumber(f);
    let n = coils.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 1.0;
        }
        let d = (coils[i].center_vec() - coils[j].center_vec()).norm();
        libm::j0(k * d) * coils[i].axis_vec().dot(&coils[j].axis_vec())
    })
}

/// `(Re Z_T^in)^{-1/2}`: generator currents per unit transmit signal.
pub fn transmit_current_map(z_t_in: &CMatrix) -> Result<CMatrix> {
    linalg::hermitian_pow(&linalg::re(z_t_in), -0.5, "Re{Z_T^in}")
}

/// `H = D (Z_T^in + R I) (Re Z_T^in)^{-1/2} / sqrt(R)`.
pub fn build_channel_matrix(analysis: &ChainAnalysis, r: f64) -> Result<CMatrix> {
    let z_in = &analysis.input.t;
    let n_t = z_in.nrows();
    let a = transmit_current_map(z_in)?;
    let drive = z_in + CMatrix::identity(n_t, n_t) * C64::new(r, 0.0);
    Ok((&analysis.d * drive * a).unscale(r.sqrt()))
}

/// Active power per generator, `diag Re(Z_T^in E[i_G i_G^H])`, for `E[x x^H] = q_x`.
pub fn per_generator_power(q_x: &CMatrix, z_t_in: &CMatrix) -> Result<Vec<f64>> {
    let n = z_t_in.nrows();
    if q_x.nrows() != n || q_x.ncols() != n || z_t_in.ncols() != n {
        return domain(format!(
            "Q_x is {}x{}, Z_T^in is {}x{}",
            q_x.nrows(),
            q_x.ncols(),
            n,
            z_t_in.ncols()
        ));
    }
    let a = transmit_current_map(z_t_in)?;
    let cov_i = &a * q_x * &a;
    let s = z_t_in * cov_i;
    Ok((0..n).map(|i| s[(i, i)].re).collect())
}

/// `B_n` with `S_nn = tr(B_n Q_x)` for every generator `n`.
pub fn per_generator_power_forms(z_t_in: &CMatrix) -> Result<Vec<CMatrix>> {
    let n = z_t_in.nrows();
    let a = transmit_current_map(z_t_in)?;
    Ok((0..n)
        .map(|i| {
            // S_nn = Re(z_n^T A Q A e_n) = tr(B Q) with B the Hermitian part of A e_n z_n^T A.
            let col = a.column(i).into_owned();
            let row = z_t_in.row(i).into_owned() * &a;
            linalg::hermitian_part(&(col * row))
        })
        .collect())
}

/// Where each physical noise source lands: open-circuit voltages at the Rx matching
/// outputs per unit source EMF.
#[derive(Debug, Clone)]
pub struct NoiseTransfer {
    /// Per unit series EMF in each coil (all coils of the network).
    pub coils: CMatrix,
    /// Per unit EMF of other resistors (generators, resistive terminations).
    pub resistors: CMatrix,
    pub resistances: Vec<f64>,
}

/// Builds the transfer of every noise source for a chain whose antenna stage is
/// `reduced` with ports ordered `[Tx..., Rx...]`.
pub fn noise_transfer(
    chain: &Chain<'_>,
    analysis: &ChainAnalysis,
    reduced: &ReducedAntenna,
) -> Result<NoiseTransfer> {
    let (n_t, n_r) = (chain.n_t(), chain.n_r());
    if reduced.ports.len() != n_t + n_r {
        return domain("reduced antenna ports do not match the chain");
    }
    // Rx coil open-circuit voltages with the Tx ports closed by Z_T^out:
    // v_R = v_R^oc - Z_RT (Z_A:T + Z_T^out)^{-1} v_T^oc.
    let z_rt = chain.z_a.cross();
    let closed = chain.z_a.front() + &analysis.output.t;
    let back = solve(&closed.transpose(), &z_rt.transpose(), "noise transfer (Z_A:T + Z_T^out)")?
        .transpose();
    let mut m = CMatrix::zeros(n_r, n_t + n_r);
    for i in 0..n_r {
        for j in 0..n_t {
            m[(i, j)] = -back[(i, j)];
        }
        m[(i, n_t + i)] = C64::new(1.0, 0.0);
    }
    let to_out = &analysis.d_r * m;
    let coils = &to_out * &reduced.emf_transfer;

    let mut cols: Vec<CMatrix> = Vec::new();
    let mut resistances = Vec::new();
    // Generator resistors: the same path as the signal.
    let gen = (&analysis.d_r * &z_rt * &analysis.y_t).scale(-1.0);
    cols.push(gen);
    resistances.extend(std::iter::repeat_n(chain.r, n_t));
    let term = &to_out * &reduced.termination_transfer;
    for (j, z) in reduced.terminations.iter().enumerate() {
        if z.re > 0.0 {
            cols.push(term.columns(j, 1).into_owned());
            resistances.push(z.re);
        }
    }
    let width: usize = cols.iter().map(|c| c.ncols()).sum();
    let mut resistors = CMatrix::zeros(n_r, width);
    let mut c0 = 0;
    for c in cols {
        resistors.view_mut((0, c0), (n_r, c.ncols())).copy_from(&c);
        c0 += c.ncols();
    }
    Ok(NoiseTransfer {
        coils,
        resistors,
        resistances,
    })
}

/// `K = (D_L Psi D_L^H + sigma_iid^2 I) / R`, `Psi = Psi_extrinsic + Psi_thermal + Psi_LNA`.
///
/// `circuits` and `phi` cover every coil of the network (the columns of
/// `transfer.coils`).
#[allow(clippy::too_many_arguments)]
pub fn build_noise_covariance(
    env: &NoiseEnvironment,
    transfer: &NoiseTransfer,
    circuits: &[CoilCircuit],
    phi: &DMatrix<f64>,
    z_r_out: &CMatrix,
    d_l: &CMatrix,
    w: f64,
    r: f64,
) -> Result<CMatrix> {
    let n_r = z_r_out.nrows();
    let n_all = circuits.len();
    if transfer.coils.ncols() != n_all || phi.nrows() != n_all {
        return domain("noise transfer, circuits and correlation disagree in size");
    }
    let kb = 4.0 * BOLTZMANN * w;

    let rad_sqrt: Vec<f64> = circuits.iter().map(|c| c.radiation_resistance.sqrt()).collect();
    let s = &transfer.coils * linalg::real_diag(&rad_sqrt);
    let psi_ext = (&s * linalg::complexify(phi) * s.adjoint()).scale(kb * env.antenna_temperature);

    let ohm_sqrt: Vec<f64> = circuits.iter().map(|c| c.ohmic_resistance.sqrt()).collect();
    let t_coil = &transfer.coils * linalg::real_diag(&ohm_sqrt);
    let res_sqrt: Vec<f64> = transfer.resistances.iter().map(|v| v.sqrt()).collect();
    let t_res = &transfer.resistors * linalg::real_diag(&res_sqrt);
    let psi_th = (&t_coil * t_coil.adjoint() + &t_res * t_res.adjoint())
        .scale(kb * env.physical_temperature);

    let lna = &env.lna;
    let rn = lna.noise_resistance;
    let rho = lna.rho();
    let eye = CMatrix::identity(n_r, n_r);
    let psi_lna = (eye.scale(rn * rn) + z_r_out * z_r_out.adjoint()
        - (z_r_out * rho.conj() + z_r_out.adjoint() * rho).scale(rn))
    .scale(lna.beta);

    let psi = psi_ext + psi_th + psi_lna;
    let k = (d_l * psi * d_l.adjoint() + eye.scale(lna.iid_variance)).unscale(r);
    linalg::repair_psd(&k, PSD_TOLERANCE, "noise covariance K")
}

/// How a coil that is not a port of the link is closed.
#[derive(Debug, Clone)]
pub enum Termination {
    Open,
    Capacitor(f64),
    Impedance(C64),
    /// Coil side of a matching two-port whose other port sees the reference resistance.
    Network(LumpedNetwork),
}

impl Termination {
    pub fn impedance(&self, f: f64, r: f64) -> Result<C64> {
        Ok(match self {
            Termination::Open => C64::new(crate::coupling::OPEN_CIRCUIT_OHMS, 0.0),
            Termination::Capacitor(c) => C64::new(0.0, -1.0 / (omega(f) * c)),
            Termination::Impedance(z) => *z,
            Termination::Network(net) => {
                let z = net.evaluate(f)?;
                z[(1, 1)] - z[(1, 0)] * z[(0, 1)] / (z[(0, 0)] + r)
            }
        })
    }
}

/// Matching at one end of a link.
#[derive(Debug, Clone)]
pub enum Matching {
    /// Generators or loads directly at the coil ports.
    Through,
    /// Fixed lumped designs: one ideal multiport or one two-port per coil.
    Networks(Vec<LumpedNetwork>),
    /// Ideal multiport power match, re-synthesized at every frequency.
    PowerMatch,
    /// Ideal multiport noise match (Rx only), re-synthesized at every frequency.
    NoiseMatch,
}

/// A link between coil groups of a coupling model, evaluated bin by bin.
#[derive(Debug, Clone)]
pub struct LinkSystem {
    pub model: CouplingModel,
    /// Transmitting coils (port order of `x`).
    pub tx: Vec<usize>,
    /// Receiving coils (port order of `y`).
    pub rx: Vec<usize>,
    pub tx_matching: Matching,
    pub rx_matching: Matching,
    /// Closure of every coil that is neither Tx nor Rx, indexed by coil.
    pub terminations: Vec<Termination>,
    pub r: f64,
    pub noise: NoiseEnvironment,
    /// Iteration budget for joint ideal matching at both ends.
    pub alternating_iterations: usize,
}

/// Everything computed for one bin.
#[derive(Debug, Clone)]
pub struct LinkBin {
    pub channel: NarrowbandChannel,
    pub analysis: ChainAnalysis,
}

impl LinkSystem {
    pub fn new(
        model: CouplingModel,
        tx: Vec<usize>,
        rx: Vec<usize>,
        tx_matching: Matching,
        rx_matching: Matching,
        r: f64,
        noise: NoiseEnvironment,
    ) -> Self {
        let n = model.len();
        Self {
            model,
            tx,
            rx,
            tx_matching,
            rx_matching,
            terminations: vec![Termination::Open; n],
            r,
            noise,
            alternating_iterations: 200,
        }
    }

    fn ports(&self) -> Vec<usize> {
        self.tx.iter().chain(self.rx.iter()).copied().collect()
    }

    /// The reduced antenna stage (`[Tx, Rx]` ports) at `f`.
    pub fn antenna(&self, state: &AntennaState) -> Result<ReducedAntenna> {
        let f = state.frequency;
        if self.terminations.len() != self.model.len() {
            return domain("one termination per coil is required");
        }
        let z_term = self
            .terminations
            .iter()
            .map(|t| t.impedance(f, self.r))
            .collect::<Result<Vec<_>>>()?;
        state.reduce(&self.ports(), &z_term)
    }

    fn fixed_stage(m: &Matching, f: f64, coil_side_front: bool) -> Result<Option<PartitionedImpedance>> {
        match m {
            Matching::Networks(nets) => Ok(Some(two_port_stage(nets, f, coil_side_front)?)),
            _ => Ok(None),
        }
    }

    /// Matching stages at `f` for the antenna stage `z_a`.
    pub fn stages(
        &self,
        z_a: &PartitionedImpedance,
        f: f64,
    ) -> Result<(Option<PartitionedImpedance>, Option<PartitionedImpedance>)> {
        let r = self.r;
        let adaptive_tx = matches!(self.tx_matching, Matching::PowerMatch);
        let adaptive_rx = matches!(self.rx_matching, Matching::PowerMatch | Matching::NoiseMatch);
        if matches!(self.tx_matching, Matching::NoiseMatch) {
            return domain("noise matching applies to the receive side only");
        }
        let mut z_t = Self::fixed_stage(&self.tx_matching, f, false)?;
        let mut z_r = Self::fixed_stage(&self.rx_matching, f, true)?;
        if adaptive_tx && adaptive_rx {
            let goal = match self.rx_matching {
                Matching::NoiseMatch => RxGoal::Present(self.noise.lna.z_opt()),
                _ => RxGoal::Power,
            };
            let m = alternating_match(z_a, r, goal, self.alternating_iterations, 1e-10)?;
            if !m.converged {
                log::debug!("joint matching at {f:.6e} Hz stopped after {} iterations", m.iterations);
            }
            return Ok((Some(m.z_t), Some(m.z_r)));
        }
        if adaptive_rx {
            let out = Chain { z_t: z_t.as_ref(), z_a, z_r: None, r }.output_impedances()?.a;
            let net = match self.rx_matching {
                Matching::NoiseMatch => synthesize_noise_match_multiport(&out, &self.noise.lna, f)?,
                _ => synthesize_power_match_multiport(&out, r, f)?,
            };
            z_r = Some(two_port_stage(&[net], f, true)?);
        }
        if adaptive_tx {
            let inp = Chain { z_t: None, z_a, z_r: z_r.as_ref(), r }.input_impedances()?.a;
            let net = synthesize_power_match_multiport(&inp, r, f)?;
            z_t = Some(two_port_stage(&[net], f, false)?);
        }
        Ok((z_t, z_r))
    }

    /// Channel (and optionally noise covariance) in the bin centred at `f`.
    pub fn evaluate(&self, f: f64, w: f64, with_noise: bool) -> Result<LinkBin> {
        let state = AntennaState::new(&self.model, f)?;
        self.evaluate_at(&state, w, with_noise)
    }

    /// As [`Self::evaluate`], reusing an antenna state.
    pub fn evaluate_at(&self, state: &AntennaState, w: f64, with_noise: bool) -> Result<LinkBin> {
        let f = state.frequency;
        let reduced = self.antenna(state)?;
        let z_a = PartitionedImpedance::new(reduced.z_a.clone(), self.tx.len())?;
        let (z_t, z_r) = self.stages(&z_a, f)?;
        let chain = Chain {
            z_t: z_t.as_ref(),
            z_a: &z_a,
            z_r: z_r.as_ref(),
            r: self.r,
        };
        let analysis = chain.analyze()?;
        let h = build_channel_matrix(&analysis, self.r)?;
        let n_r = self.rx.len();
        let noise_cov = if with_noise {
            let transfer = noise_transfer(&chain, &analysis, &reduced)?;
            let phi = self.noise.correlation_matrix(&self.model.geometries(), f)?;
            build_noise_covariance(
                &self.noise,
                &transfer,
                &state.circuits,
                &phi,
                &analysis.output.r,
                &analysis.d_l,
                w,
                self.r,
            )?
        } else {
            CMatrix::zeros(n_r, n_r)
        };
        Ok(LinkBin {
            channel: NarrowbandChannel {
                h_matrix: h,
                noise_cov,
                center_frequency: f,
                bandwidth: w,
                z_t_in: analysis.input.t.clone(),
            },
            analysis,
        })
    }

    /// `Z_A^in`: the antenna stage seen from the Tx coil ports with the Rx side loaded.
    pub fn tx_port_impedance(&self, f: f64) -> Result<CMatrix> {
        let state = AntennaState::new(&self.model, f)?;
        let reduced = self.antenna(&state)?;
        let z_a = PartitionedImpedance::new(reduced.z_a, self.tx.len())?;
        let (_, z_r) = self.stages(&z_a, f)?;
        Ok(Chain { z_t: None, z_a: &z_a, z_r: z_r.as_ref(), r: self.r }
            .input_impedances()?
            .a)
    }

    /// Largest unloaded coil Q of the link over its ports at `f`.
    pub fn max_port_q(&self, f: f64) -> Result<f64> {
        let mut q: f64 = 0.0;
        for &i in self.tx.iter().chain(self.rx.iter()) {
            let c = CoilCircuit::evaluate(self.model.geometry(i), f)?;
            q = q.max(omega(f) * c.inductance / c.resistance());
        }
        Ok(q)
    }
}

/// Bin centres `f_lo + (k + 1/2) W`, `W = (f_hi - f_lo) / n_bins`.
pub fn bin_centers(f_lo: f64, f_hi: f64, n_bins: usize) -> Result<(Vec<f64>, f64)> {
    if !(f_lo > 0.0 && f_hi > f_lo) || n_bins == 0 {
        return domain(format!("invalid sweep [{f_lo}, {f_hi}] with {n_bins} bins"));
    }
    let w = (f_hi - f_lo) / n_bins as f64;
    Ok(((0..n_bins).map(|k| f_lo + (k as f64 + 0.5) * w).collect(), w))
}

/// Evaluates every bin of `[f_lo, f_hi]`; failed bins are reported individually.
pub fn broadband_sweep(
    system: &LinkSystem,
    f_lo: f64,
    f_hi: f64,
    n_bins: usize,
    with_noise: bool,
) -> Result<Vec<Result<NarrowbandChannel>>> {
    let (centers, w) = bin_centers(f_lo, f_hi, n_bins)?;
    let f_mid = 0.5 * (f_lo + f_hi);
    if let Ok(q) = system.max_port_q(f_mid) {
        if w > f_mid / (2.0 * q) {
            log::warn!(
                "bin width {w:.3e} Hz exceeds half the coherence bandwidth f/(2Q) = {:.3e} Hz",
                f_mid / (2.0 * q)
            );
        }
    }
    Ok(centers
        .par_iter()
        .map(|&f| system.evaluate(f, w, with_noise).map(|b| b.channel))
        .collect())
}
