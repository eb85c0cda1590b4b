//! Cascaded multiport algebra for the generator → Tx matching → antennas → Rx matching → load chain.
//!
//! Every stage is a reciprocal impedance matrix split into a front and a back port
//! group (see [`PartitionedImpedance`]). The Tx matching network has its generator
//! ports in front, the antenna network its Tx coils, and the Rx matching network its
//! coil-side ports; the back groups face the next stage.

pub mod lumped;
pub mod matching;
pub mod reference;

use crate::error::{domain, Result};
use crate::linalg::{self, solve};
use crate::{CMatrix, C64};

pub use lumped::{
    evaluate_lumped, synthesize_l_network, synthesize_t_network_snr_opt, two_port_stage, Element,
    ElementKind, LumpedNetwork, Placement, TOptOptions, TOptResult, Topology,
};
pub use matching::{
    alternating_match, ideal_match_blocks, synthesize_noise_match_multiport,
    synthesize_power_match_multiport, AlternatingMatch, LnaNoiseParams, RxGoal,
};

/// Impedance matrix with ports grouped as `[front; back]`.
///
/// Blocks: `front` (n_front × n_front), `back` (n_back × n_back) and `cross`, the
/// back-rows × front-columns coupling block (so `Z_T:AG`, `Z_A:RT`, `Z_R:LA`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedImpedance {
    pub matrix: CMatrix,
    pub n_front: usize,
    pub n_back: usize,
}

impl PartitionedImpedance {
    pub fn new(matrix: CMatrix, n_front: usize) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n_front > n {
            return domain(format!(
                "partitioned impedance: {}x{} matrix cannot split at {n_front}",
                n,
                matrix.ncols()
            ));
        }
        Ok(Self {
            matrix,
            n_front,
            n_back: n - n_front,
        })
    }

    /// Assembles from blocks; `cross` is back × front and the matrix is made symmetric.
    pub fn from_blocks(front: &CMatrix, cross: &CMatrix, back: &CMatrix) -> Result<Self> {
        let (nf, nb) = (front.nrows(), back.nrows());
        if cross.nrows() != nb || cross.ncols() != nf {
            return domain("partitioned impedance: cross block has the wrong shape");
        }
        let mut m = CMatrix::zeros(nf + nb, nf + nb);
        m.view_mut((0, 0), (nf, nf)).copy_from(front);
        m.view_mut((nf, nf), (nb, nb)).copy_from(back);
        m.view_mut((nf, 0), (nb, nf)).copy_from(cross);
        m.view_mut((0, nf), (nf, nb)).copy_from(&cross.transpose());
        Self::new(m, nf)
    }

    pub fn front(&self) -> CMatrix {
        linalg::block(&self.matrix, 0, 0, self.n_front, self.n_front)
    }

    pub fn back(&self) -> CMatrix {
        linalg::block(&self.matrix, self.n_front, self.n_front, self.n_back, self.n_back)
    }

    /// Back-rows × front-columns block.
    pub fn cross(&self) -> CMatrix {
        linalg::block(&self.matrix, self.n_front, 0, self.n_back, self.n_front)
    }

    /// Front-rows × back-columns block (the transpose of `cross` for reciprocal networks).
    pub fn cross_up(&self) -> CMatrix {
        linalg::block(&self.matrix, 0, self.n_front, self.n_front, self.n_back)
    }

    /// Same network with front and back groups exchanged.
    pub fn flipped(&self) -> Self {
        let (nf, nb) = (self.n_front, self.n_back);
        let perm: Vec<usize> = (nf..nf + nb).chain(0..nf).collect();
        let m = CMatrix::from_fn(nf + nb, nf + nb, |i, j| self.matrix[(perm[i], perm[j])]);
        Self {
            matrix: m,
            n_front: nb,
            n_back: nf,
        }
    }

    /// Impedance seen at the back ports with the front ports terminated in `z_src`.
    pub fn back_impedance(&self, z_src: &CMatrix, stage: &str) -> Result<CMatrix> {
        let x = solve(&(self.front() + z_src), &self.cross_up(), stage)?;
        Ok(self.back() - self.cross() * x)
    }

    /// Impedance seen at the front ports with the back ports terminated in `z_load`.
    pub fn front_impedance(&self, z_load: &CMatrix, stage: &str) -> Result<CMatrix> {
        let x = solve(&(self.back() + z_load), &self.cross(), stage)?;
        Ok(self.front() - self.cross_up() * x)
    }

    pub fn symmetry_error(&self) -> f64 {
        linalg::symmetry_error(&self.matrix)
    }
}

/// The three stage impedances of a chain, at one frequency.
///
/// `z_t` or `z_r` may be absent: the generators (or loads) then connect straight to
/// the coil ports.
#[derive(Debug, Clone, Copy)]
pub struct Chain<'a> {
    pub z_t: Option<&'a PartitionedImpedance>,
    pub z_a: &'a PartitionedImpedance,
    pub z_r: Option<&'a PartitionedImpedance>,
    pub r: f64,
}

/// Port impedances of the three stages (input or output side).
#[derive(Debug, Clone)]
pub struct StageImpedances {
    pub t: CMatrix,
    pub a: CMatrix,
    pub r: CMatrix,
}

fn scaled_identity(n: usize, r: f64) -> CMatrix {
    CMatrix::identity(n, n) * C64::new(r, 0.0)
}

impl<'a> Chain<'a> {
    pub fn n_t(&self) -> usize {
        self.z_a.n_front
    }

    pub fn n_r(&self) -> usize {
        self.z_a.n_back
    }

    fn check(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return domain(format!("reference impedance must be positive (got {})", self.r));
        }
        if let Some(t) = self.z_t {
            if t.n_front != self.n_t() || t.n_back != self.n_t() {
                return domain(format!(
                    "Tx matching network is {}+{} ports, antennas have {} Tx coils",
                    t.n_front,
                    t.n_back,
                    self.n_t()
                ));
            }
        }
        if let Some(r) = self.z_r {
            if r.n_front != self.n_r() || r.n_back != self.n_r() {
                return domain(format!(
                    "Rx matching network is {}+{} ports, antennas have {} Rx coils",
                    r.n_front,
                    r.n_back,
                    self.n_r()
                ));
            }
        }
        Ok(())
    }

    /// Output-side impedances, evaluated T → A → R with the generators terminated in R.
    pub fn output_impedances(&self) -> Result<StageImpedances> {
        self.check()?;
        let r_t = scaled_identity(self.n_t(), self.r);
        let t = match self.z_t {
            Some(z) => z.back_impedance(&r_t, "Z_T^out (Z_T:G + R I)")?,
            None => r_t,
        };
        let a = self.z_a.back_impedance(&t, "Z_A^out (Z_A:T + Z_T^out)")?;
        let r = match self.z_r {
            Some(z) => z.back_impedance(&a, "Z_R^out (Z_R:A + Z_A^out)")?,
            None => a.clone(),
        };
        Ok(StageImpedances { t, a, r })
    }

    /// Input-side impedances, evaluated R → A → T with the loads terminated in R.
    pub fn input_impedances(&self) -> Result<StageImpedances> {
        self.check()?;
        let r_r = scaled_identity(self.n_r(), self.r);
        let r = match self.z_r {
            Some(z) => z.front_impedance(&r_r, "Z_R^in (Z_R:L + R I)")?,
            None => r_r,
        };
        let a = self.z_a.front_impedance(&r, "Z_A^in (Z_A:R + Z_R^in)")?;
        let t = match self.z_t {
            Some(z) => z.front_impedance(&a, "Z_T^in (Z_T:A + Z_A^in)")?,
            None => a.clone(),
        };
        Ok(StageImpedances { t, a, r })
    }

    /// Full analysis: port impedances and the gain factors of the transfer chain.
    pub fn analyze(&self) -> Result<ChainAnalysis> {
        let out = self.output_impedances()?;
        let inp = self.input_impedances()?;
        let (n_t, n_r) = (self.n_t(), self.n_r());
        let r_t = scaled_identity(n_t, self.r);
        let r_r = scaled_identity(n_r, self.r);

        let d_l = solve(&(&r_r + &out.r).transpose(), &r_r, "D_L (R I + Z_R^out)")?.transpose();
        let d_r = match self.z_r {
            Some(z) => {
                let m = z.front() + &out.a;
                solve(&m.transpose(), &z.cross().transpose(), "D_R (Z_R:A + Z_A^out)")?
                    .transpose()
            }
            None => CMatrix::identity(n_r, n_r),
        };
        // Current into the Tx coils per generator voltage, with the Rx ports open; the
        // Rx reaction is carried by Z_A^out in D_R.
        let y_t = match self.z_t {
            Some(z) => {
                let g = solve(&(z.front() + &r_t), &CMatrix::identity(n_t, n_t), "Y_T (Z_T:G + R I)")?;
                solve(&(self.z_a.front() + &out.t), &(z.cross() * g), "Y_T (Z_A:T + Z_T^out)")?
            }
            None => linalg::inverse(&(self.z_a.front() + &r_t), "Y_T (Z_A:T + R I)")?,
        };
        let d = &d_l * &d_r * self.z_a.cross() * &y_t;
        Ok(ChainAnalysis {
            input: inp,
            output: out,
            d_l,
            d_r,
            y_t,
            d,
        })
    }

    /// End-to-end voltage gain `D` (N_R × N_T) from generator voltages to load voltages.
    pub fn transfer_matrix(&self) -> Result<CMatrix> {
        Ok(self.analyze()?.d)
    }
}

/// Everything the channel model needs from one chain evaluation.
#[derive(Debug, Clone)]
pub struct ChainAnalysis {
    pub input: StageImpedances,
    pub output: StageImpedances,
    pub d_l: CMatrix,
    pub d_r: CMatrix,
    pub y_t: CMatrix,
    pub d: CMatrix,
}

pub fn output_impedances(
    z_t: Option<&PartitionedImpedance>,
    z_a: &PartitionedImpedance,
    z_r: Option<&PartitionedImpedance>,
    r: f64,
) -> Result<StageImpedances> {
    Chain { z_t, z_a, z_r, r }.output_impedances()
}

pub fn input_impedances(
    z_t: Option<&PartitionedImpedance>,
    z_a: &PartitionedImpedance,
    z_r: Option<&PartitionedImpedance>,
    r: f64,
) -> Result<StageImpedances> {
    Chain { z_t, z_a, z_r, r }.input_impedances()
}

pub fn transfer_matrix(
    z_t: Option<&PartitionedImpedance>,
    z_a: &PartitionedImpedance,
    z_r: Option<&PartitionedImpedance>,
    r: f64,
) -> Result<CMatrix> {
    Chain { z_t, z_a, z_r, r }.transfer_matrix()
}
