//! Monolithic Kirchhoff solve of the whole chain, used as an independent oracle.
//!
//! Unknowns are the port currents flowing into the Tx matching network from the
//! generators (`i_g`), into the Tx coils (`i_t`), into the Rx coils (`i_r`) and into
//! the Rx matching network from the loads (`i_l`). The stage equations are written
//! directly from the stage impedance matrices, with no cascading formulas.

use super::Chain;
use crate::error::Result;
use crate::linalg::solve;
use crate::{CMatrix, CVector, C64};

#[derive(Debug, Clone)]
pub struct KirchhoffSolution {
    /// Generator output currents.
    pub i_g: CVector,
    /// Generator terminal voltages (after the internal resistance R).
    pub v_g_port: CVector,
    /// Load voltages.
    pub v_load: CVector,
    /// Active power delivered by each generator into the network.
    pub generator_power: Vec<f64>,
    /// Active power absorbed by each load.
    pub load_power: Vec<f64>,
    /// Currents into the Tx and Rx coil ports.
    pub i_coil_t: CVector,
    pub i_coil_r: CVector,
}

/// Solves the chain driven by generator EMFs `v_g` behind internal resistances `R`.
pub fn solve_chain(chain: &Chain<'_>, v_g: &CVector) -> Result<KirchhoffSolution> {
    let (nt, nr, r) = (chain.n_t(), chain.n_r(), chain.r);
    let has_t = chain.z_t.is_some();
    let has_r = chain.z_r.is_some();
    // Unknown layout: [i_g (if T), i_t, i_r, i_l (if R)].
    let og = 0;
    let ot = if has_t { nt } else { 0 };
    let or = ot + nt;
    let ol = or + nr;
    let n = ol + if has_r { nr } else { 0 };
    let mut m = CMatrix::zeros(n, n);
    let mut rhs = CVector::zeros(n);
    let za = chain.z_a;
    let (a_t, a_tr, a_rt, a_r) = (za.front(), za.cross_up(), za.cross(), za.back());
    let rr = C64::new(r, 0.0);

    let put = |m: &mut CMatrix, r0: usize, c0: usize, b: &CMatrix, s: C64| {
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                m[(r0 + i, c0 + j)] += b[(i, j)] * s;
            }
        }
    };
    let one = C64::new(1.0, 0.0);
    let eye_t = CMatrix::identity(nt, nt);
    let eye_r = CMatrix::identity(nr, nr);

    // Rows 0..nt: Tx side.
    match chain.z_t {
        Some(zt) => {
            // Generator loop: v_g = R i_g + T_G i_g + T_AG^T (-i_t).
            put(&mut m, og, og, &(zt.front() + &eye_t * rr), one);
            put(&mut m, og, ot, &zt.cross_up(), -one);
            for i in 0..nt {
                rhs[og + i] = v_g[i];
            }
            // Interface T/A: T_AG i_g - T_A i_t = A_T i_t + A_TR i_r.
            put(&mut m, ot, og, &zt.cross(), one);
            put(&mut m, ot, ot, &(zt.back() + &a_t), -one);
            put(&mut m, ot, or, &a_tr, -one);
        }
        None => {
            // Generator drives the coil directly: v_g = R i_t + A_T i_t + A_TR i_r.
            put(&mut m, ot, ot, &(&a_t + &eye_t * rr), one);
            put(&mut m, ot, or, &a_tr, one);
            for i in 0..nt {
                rhs[ot + i] = v_g[i];
            }
        }
    }
    match chain.z_r {
        Some(zr) => {
            // Interface A/R: A_RT i_t + A_R i_r = -R_A i_r + R_LA^T i_l.
            put(&mut m, or, ot, &a_rt, one);
            put(&mut m, or, or, &(&a_r + zr.front()), one);
            put(&mut m, or, ol, &zr.cross_up(), -one);
            // Load: R_LA (-i_r) + R_L i_l = -R i_l.
            put(&mut m, ol, or, &zr.cross(), -one);
            put(&mut m, ol, ol, &(zr.back() + &eye_r * rr), one);
        }
        None => {
            // Coil port closed by the load: A_RT i_t + A_R i_r = -R i_r.
            put(&mut m, or, ot, &a_rt, one);
            put(&mut m, or, or, &(&a_r + &eye_r * rr), one);
        }
    }
    let x = solve(&m, &CMatrix::from_column_slice(n, 1, rhs.as_slice()), "Kirchhoff reference solve")?;
    let x = x.column(0).into_owned();

    let i_g: CVector = if has_t { x.rows(og, nt).into_owned() } else { x.rows(ot, nt).into_owned() };
    let i_t = x.rows(ot, nt).into_owned();
    let i_r = x.rows(or, nr).into_owned();
    let v_g_port = v_g - &i_g * rr;
    let v_load: CVector = if has_r {
        x.rows(ol, nr).map(|i| -i * rr)
    } else {
        i_r.map(|i| -i * rr)
    };
    let generator_power = (0..nt).map(|i| (v_g_port[i] * i_g[i].conj()).re).collect();
    let load_power = (0..nr).map(|i| v_load[i].norm_sqr() / r).collect();
    Ok(KirchhoffSolution {
        i_g,
        v_g_port,
        v_load,
        generator_power,
        load_power,
        i_coil_t: i_t,
        i_coil_r: i_r,
    })
}
