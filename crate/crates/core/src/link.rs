//! Link-level algorithms: downlink beamforming, sensor power budgets, waterfilling,
//! whitened combining and the cooperative uplink rate under per-node power limits.

use serde::{Deserialize, Serialize};

use crate::error::{domain, numerical, Result};
use crate::linalg;
use crate::{CMatrix, CVector, C64};

/// Sensor-side signalling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Nominal matching, downlink at the design frequency, flat in-band allocation.
    Simple,
    /// Matching adapted to the coupled sensor, frequency-tuned downlink, waterfilling.
    Elaborate,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Simple => "simple",
            Scheme::Elaborate => "elaborate",
        }
    }
}

/// Downlink power received by a sensor and what it can spend on the uplink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBudget {
    pub received_power: f64,
    pub activation_threshold: f64,
    pub uplink_power: f64,
    pub in_outage: bool,
}

impl PowerBudget {
    /// Half of the power above the activation threshold goes to the uplink.
    pub fn from_received(received_power: f64, activation_threshold: f64) -> Self {
        let in_outage = !(received_power > activation_threshold);
        Self {
            received_power,
            activation_threshold,
            uplink_power: if in_outage { 0.0 } else { 0.5 * (received_power - activation_threshold) },
            in_outage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    /// bit/s.
    pub total_rate: f64,
    /// `[bin][node]` transmit power (W).
    pub per_bin_power: Vec<Vec<f64>>,
    /// bit/s per bin.
    pub per_bin_rate: Vec<f64>,
    pub scheme: Option<Scheme>,
    /// No bin could carry power (all gains zero or zero budget).
    pub unallocated: bool,
    /// Largest per-bin optimality residual (0 for closed-form allocations).
    pub kkt_residual: f64,
}

impl RateResult {
    pub fn zero(n_bins: usize, n_nodes: usize, scheme: Option<Scheme>) -> Self {
        Self {
            total_rate: 0.0,
            per_bin_power: vec![vec![0.0; n_nodes]; n_bins],
            per_bin_rate: vec![0.0; n_bins],
            scheme,
            unallocated: true,
            kkt_residual: 0.0,
        }
    }

    /// Total power of `node` over all bins.
    pub fn node_power(&self, node: usize) -> f64 {
        self.per_bin_power.iter().map(|p| p[node]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct MrtResult {
    /// Unit-norm transmit weights.
    pub beamformer: CVector,
    /// `|h|^2`.
    pub pte: f64,
    pub received_power: f64,
    pub outage: bool,
}

/// Maximum-ratio transmission over the row channel `y = h^T w` (`h` holds one row of H).
pub fn mrt_downlink(h: &CVector, p_t: f64) -> MrtResult {
    let norm = h.norm();
    if !(norm > 0.0) {
        return MrtResult {
            beamformer: CVector::zeros(h.len()),
            pte: 0.0,
            received_power: 0.0,
            outage: true,
        };
    }
    let pte = norm * norm;
    MrtResult {
        beamformer: h.map(|v| v.conj()).unscale(norm),
        pte,
        received_power: pte * p_t,
        outage: false,
    }
}

#[derive(Debug, Clone)]
pub struct CoopBeamformer {
    /// Unit-norm transmit weights; the transmit signal is `sqrt(P_T) w`.
    pub beamformer: CVector,
    /// Power received by every sensor.
    pub received: Vec<f64>,
    /// Whether `|y_target|^2 >= P_0` holds.
    pub constraint_met: bool,
    /// Even full-power MRT to the target cannot reach `P_0`.
    pub infeasible: bool,
}

fn dominant_eigvec(m: &CMatrix) -> CVector {
    let (vals, vecs) = linalg::hermitian_eigen(m);
    let (i, _) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    vecs.column(i).into_owned()
}

/// Maximizes the received sum power `P_T |H w|^2` subject to `P_T |h_t^T w|^2 >= P_0`.
///
/// With `G = H^H H` and `a = conj(h_t)` the Lagrangian optimum is the dominant
/// eigenvector of `G + lambda a a^H`; `lambda` is found by bisection as the smallest value
/// meeting the constraint. At an eigenvalue crossing the two eigenvectors on either
/// side are blended to meet the constraint with equality.
pub fn coop_downlink_beamform(h: &CMatrix, p_t: f64, p_0: f64, target: usize) -> Result<CoopBeamformer> {
    if target >= h.nrows() {
        return domain(format!("target {target} out of range for {} sensors", h.nrows()));
    }
    let row: CVector = h.row(target).transpose();
    let a = row.map(|v| v.conj());
    let finish = |w: CVector, infeasible: bool| {
        let y = h * &w;
        let received: Vec<f64> = y.iter().map(|v| p_t * v.norm_sqr()).collect();
        let constraint_met = received[target] >= p_0 * (1.0 - 1e-9);
        CoopBeamformer {
            beamformer: w,
            received,
            constraint_met,
            infeasible,
        }
    };
    let target_power = |w: &CVector| p_t * a.dotc(w).norm_sqr();
    if p_t * a.norm_squared() < p_0 {
        return Ok(finish(mrt_downlink(&row, p_t).beamformer, true));
    }
    let g = h.adjoint() * h;
    let aa = &a * a.adjoint();
    let w0 = dominant_eigvec(&g);
    if target_power(&w0) >= p_0 {
        return Ok(finish(w0, false));
    }
    let at = |lambda: f64| dominant_eigvec(&(&g + aa.scale(lambda)));
    let mut hi = g.norm().max(1e-300) / a.norm_squared();
    let mut w_hi = at(hi);
    let mut tries = 0;
    while target_power(&w_hi) < p_0 {
        hi *= 4.0;
        w_hi = at(hi);
        tries += 1;
        if tries > 200 {
            return Ok(finish(mrt_downlink(&row, p_t).beamformer, false));
        }
    }
    let mut lo = 0.0;
    let mut w_lo = w0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let w = at(mid);
        if target_power(&w) >= p_0 {
            hi = mid;
            w_hi = w;
        } else {
            lo = mid;
            w_lo = w;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let gap = target_power(&w_hi) - target_power(&w_lo);
    if gap <= 1e-9 * p_0 {
        return Ok(finish(w_hi, false));
    }
    // Blend across the crossing: w = cos t w_lo + e^{j phi} sin t w_hi with the phase
    // aligning both target components, t chosen for equality.
    let c_lo = a.dotc(&w_lo);
    let c_hi = a.dotc(&w_hi);
    let phase = if c_hi.norm() > 0.0 && c_lo.norm() > 0.0 {
        (c_lo / c_hi).unscale((c_lo / c_hi).norm())
    } else {
        C64::new(1.0, 0.0)
    };
    let blend = |t: f64| {
        let w = w_lo.scale(t.cos()) + (&w_hi * phase).scale(t.sin());
        let n = w.norm();
        w.unscale(n)
    };
    let (mut t_lo, mut t_hi) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..100 {
        let mid = 0.5 * (t_lo + t_hi);
        if target_power(&blend(mid)) >= p_0 {
            t_hi = mid;
        } else {
            t_lo = mid;
        }
    }
    let w = blend(t_hi);
    let sum = |w: &CVector| (h * w).norm_squared();
    Ok(finish(if sum(&w) >= sum(&w_hi) { w } else { w_hi }, false))
}

/// Water level `mu` with `sum max(0, mu - n_k) = p_total` for floors `n_k > 0`.
fn waterfill_level(floors: &[f64], p_total: f64) -> f64 {
    let mut sorted = floors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut level = 0.0;
    for (m, &v) in sorted.iter().enumerate() {
        sum += v;
        let mu = (p_total + sum) / (m + 1) as f64;
        if mu > v {
            level = mu;
        } else {
            break;
        }
    }
    level
}

/// Waterfilling `P_k = max(0, mu - 1/g_k)` with `sum P_k = P_total`; rate `sum W log2(1 + P_k g_k)`.
pub fn waterfill(gains: &[f64], p_total: f64, w: f64) -> Result<RateResult> {
    if gains.iter().any(|g| !(*g >= 0.0)) {
        return domain("waterfilling gains must be non-negative");
    }
    if !(p_total >= 0.0) {
        return domain("waterfilling budget must be non-negative");
    }
    let n = gains.len();
    let order: Vec<usize> = (0..n).filter(|&i| gains[i] > 0.0).collect();
    if order.is_empty() || p_total == 0.0 {
        return Ok(RateResult {
            unallocated: order.is_empty() && p_total > 0.0,
            ..RateResult::zero(n, 1, None)
        });
    }
    let inv: Vec<f64> = order.iter().map(|&i| 1.0 / gains[i]).collect();
    let level = waterfill_level(&inv, p_total);
    let mut power = vec![0.0; n];
    for &i in &order {
        power[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    let allocated: f64 = power.iter().sum();
    if allocated > 0.0 {
        let fix = p_total / allocated;
        power.iter_mut().for_each(|p| *p *= fix);
    }
    Ok(rates_from_powers(gains, &power, w, None))
}

/// Equal power over the bins flagged in `band` (all bins when none are flagged).
pub fn flat_allocation(gains: &[f64], band: &[bool], p_total: f64, w: f64) -> Result<RateResult> {
    if gains.len() != band.len() {
        return domain("band mask and gains differ in length");
    }
    let mut chosen: Vec<usize> = (0..gains.len()).filter(|&i| band[i]).collect();
    if chosen.is_empty() {
        chosen = (0..gains.len()).collect();
    }
    let mut power = vec![0.0; gains.len()];
    if !chosen.is_empty() {
        let each = p_total / chosen.len() as f64;
        for i in chosen {
            power[i] = each;
        }
    }
    Ok(rates_from_powers(gains, &power, w, None))
}

fn rates_from_powers(gains: &[f64], power: &[f64], w: f64, scheme: Option<Scheme>) -> RateResult {
    let per_bin_rate: Vec<f64> = gains
        .iter()
        .zip(power)
        .map(|(g, p)| w * (p * g).ln_1p() / std::f64::consts::LN_2)
        .collect();
    RateResult {
        total_rate: per_bin_rate.iter().sum(),
        unallocated: false,
        per_bin_power: power.iter().map(|p| vec![*p]).collect(),
        per_bin_rate,
        scheme,
        kkt_residual: 0.0,
    }
}

/// Relative spread of the water level over active bins, and the worst violation of
/// `1/g_k >= mu` over inactive bins.
pub fn waterfill_kkt_residual(gains: &[f64], power: &[f64]) -> f64 {
    let levels: Vec<f64> = gains
        .iter()
        .zip(power)
        .filter(|(g, p)| **p > 0.0 && **g > 0.0)
        .map(|(g, p)| p + 1.0 / g)
        .collect();
    if levels.is_empty() {
        return 0.0;
    }
    let max = levels.iter().cloned().fold(f64::MIN, f64::max);
    let min = levels.iter().cloned().fold(f64::MAX, f64::min);
    let mu = 0.5 * (max + min);
    let mut res = (max - min) / mu;
    for (g, p) in gains.iter().zip(power) {
        if *p == 0.0 && *g > 0.0 {
            res = res.max(((mu - 1.0 / g) / mu).max(0.0));
        }
    }
    res
}

/// `h^H K^{-1} h`: SNR per watt after whitened maximum-ratio combining.
pub fn whitened_mrc_gain(h: &CVector, k: &CMatrix) -> Result<f64> {
    linalg::quadratic_form_inverse(h, k, "noise covariance K")
}

/// `K^{-1/2} H`.
pub fn whiten(h: &CMatrix, k: &CMatrix) -> Result<CMatrix> {
    let k_inv_sqrt = linalg::hermitian_pow(k, -0.5, "noise covariance K")
        .map_err(|e| crate::Error::Numerical(e.to_string()))?;
    Ok(k_inv_sqrt * h)
}

/// Single-sensor uplink rate over bins with per-watt gains `gains`.
///
/// `Simple` spreads the budget evenly over the bins flagged in `band`; `Elaborate`
/// waterfills over all bins.
pub fn uplink_rate_single(
    gains: &[f64],
    band: &[bool],
    budget: &PowerBudget,
    scheme: Scheme,
    w: f64,
) -> Result<RateResult> {
    if budget.in_outage {
        return Ok(RateResult::zero(gains.len(), 1, Some(scheme)));
    }
    let mut res = match scheme {
        Scheme::Simple => flat_allocation(gains, band, budget.uplink_power, w)?,
        Scheme::Elaborate => waterfill(gains, budget.uplink_power, w)?,
    };
    res.scheme = Some(scheme);
    Ok(res)
}

/// Solver settings for the per-bin log-det problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogDetOptions {
    pub max_iters: usize,
    /// Target relative duality gap.
    pub tolerance: f64,
}

impl Default for LogDetOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogDetSolution {
    /// Optimal input covariance.
    pub q: CMatrix,
    /// `log2 det(I + H Q H^H)` (bit/s/Hz).
    pub rate: f64,
    /// Certified relative duality gap (upper bound on suboptimality).
    pub kkt_residual: f64,
    /// Lagrange multipliers of the per-node constraints.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Iterations without a 0.1% gap reduction after which the dual search stops.
const STALL_ITERS: usize = 200;

struct DualPoint {
    value: f64,
    grad: Vec<f64>,
    q: CMatrix,
}

fn log_det_nats(h: &CMatrix, q: &CMatrix) -> f64 {
    let n = h.nrows();
    let m = CMatrix::identity(n, n) + h * q * h.adjoint();
    let (vals, _) = linalg::hermitian_eigen(&m);
    vals.iter().map(|v| v.max(1e-300).ln()).sum()
}

/// Dual function `g(mu) = max_{Q >= 0} ln det(I + H Q H^H) - tr(M Q) + mu . p`,
/// `M = sum mu_n B_n`; `None` when `M` is not positive definite.
fn dual_point(h: &CMatrix, forms: &[CMatrix], budgets: &[f64], mu: &[f64]) -> Option<DualPoint> {
    let n = h.ncols();
    let mut m = CMatrix::zeros(n, n);
    for (b, &u) in forms.iter().zip(mu) {
        m += b.scale(u);
    }
    let (vals, vecs) = linalg::hermitian_eigen(&m);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if vals.iter().any(|&v| !(v > 1e-13 * scale)) {
        return None;
    }
    let m_isqrt = linalg::from_eigen(&vals.iter().map(|v| v.powf(-0.5)).collect::<Vec<_>>(), &vecs);
    let ht = h * &m_isqrt;
    let (lam, v) = linalg::hermitian_eigen(&(ht.adjoint() * &ht));
    let fill: Vec<f64> = lam.iter().map(|l| if *l > 1.0 { 1.0 - 1.0 / l } else { 0.0 }).collect();
    let q = &m_isqrt * linalg::from_eigen(&fill, &v) * &m_isqrt;
    let inner: f64 = lam
        .iter()
        .filter(|l| **l > 1.0)
        .map(|l| l.ln() - 1.0 + 1.0 / l)
        .sum();
    let value = inner + mu.iter().zip(budgets).map(|(a, b)| a * b).sum::<f64>();
    let grad = forms
        .iter()
        .zip(budgets)
        .map(|(b, p)| p - (b * &q).trace().re)
        .collect();
    Some(DualPoint { value, grad, q })
}

/// Scales `q` to the largest multiple satisfying every `tr(B_n Q) <= p_n`.
fn scale_feasible(q: &CMatrix, forms: &[CMatrix], budgets: &[f64]) -> CMatrix {
    let mut s = f64::INFINITY;
    for (b, p) in forms.iter().zip(budgets) {
        let t = (b * q).trace().re;
        if t > 0.0 {
            s = s.min(p / t);
        }
    }
    if s.is_finite() {
        q.scale(s)
    } else {
        q.clone()
    }
}

/// Scales coordinate `n` of `q` by `sqrt(p_n / tr(B_n Q))` for every node over budget,
/// a few rounds, when coordinates and nodes coincide.
fn shrink_nodes(q: &CMatrix, forms: &[CMatrix], budgets: &[f64]) -> CMatrix {
    let mut q = q.clone();
    for _ in 0..4 {
        let d: Vec<f64> = forms
            .iter()
            .zip(budgets)
            .map(|(b, p)| {
                let t = (b * &q).trace().re;
                if t > *p {
                    (p / t).sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        if d.iter().all(|v| *v == 1.0) {
            break;
        }
        let n = q.nrows();
        q = CMatrix::from_fn(n, n, |i, j| q[(i, j)] * (d[i] * d[j]));
    }
    q
}

/// Hermitian basis element `k` of an `n x n` matrix: real diagonal entries, then the
/// real and imaginary parts of each upper off-diagonal pair.
fn hermitian_basis(n: usize) -> Vec<(u8, usize, usize)> {
    let mut out: Vec<(u8, usize, usize)> = (0..n).map(|i| (0, i, i)).collect();
    for i in 0..n {
        for j in i + 1..n {
            out.push((1, i, j));
            out.push((2, i, j));
        }
    }
    out
}

/// `M E_k` for basis element `k`.
fn times_basis(m: &CMatrix, (kind, i, j): (u8, usize, usize)) -> CMatrix {
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    let (a, b) = match kind {
        0 => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
        1 => (C64::new(1.0, 0.0), C64::new(1.0, 0.0)),
        _ => (C64::new(0.0, 1.0), C64::new(0.0, -1.0)),
    };
    // E = a e_i e_j^T + b e_j e_i^T (diagonal: a e_i e_i^T).
    for r in 0..n {
        out[(r, j)] += m[(r, i)] * a;
        if kind != 0 {
            out[(r, i)] += m[(r, j)] * b;
        }
    }
    out
}

fn trace_with_basis(m: &CMatrix, (kind, i, j): (u8, usize, usize)) -> f64 {
    match kind {
        0 => m[(i, i)].re,
        1 => (m[(j, i)] + m[(i, j)]).re,
        _ => (C64::new(0.0, 1.0) * (m[(j, i)] - m[(i, j)])).re,
    }
}

fn from_basis(x: &[f64], basis: &[(u8, usize, usize)], n: usize) -> CMatrix {
    let mut out = CMatrix::zeros(n, n);
    for (&v, &(kind, i, j)) in x.iter().zip(basis) {
        match kind {
            0 => out[(i, i)] += v,
            1 => {
                out[(i, j)] += v;
                out[(j, i)] += v;
            }
            _ => {
                out[(i, j)] += C64::new(0.0, v);
                out[(j, i)] += C64::new(0.0, -v);
            }
        }
    }
    out
}

/// `2 sum ln diag(L)` of a Cholesky factor, or `None` if not positive definite.
fn ln_det_pd(m: &CMatrix) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(linalg::hermitian_part(m))?;
    let l = chol.l_dirty();
    Some((0..m.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

struct BarrierSolution {
    q: CMatrix,
    nats: f64,
    gap: f64,
    multipliers: Vec<f64>,
    iterations: usize,
}

/// Primal log-barrier Newton method for the log-det problem, used where the dual
/// iteration stalls at the edge of its domain. `start` must be feasible if given.
fn log_det_barrier(
    h: &CMatrix,
    forms: &[CMatrix],
    budgets: &[f64],
    tol: f64,
    start: Option<&CMatrix>,
) -> Option<BarrierSolution> {
    let n = h.ncols();
    let m = forms.len();
    // Variables scaled per node so every constraint has unit budget.
    let d: Vec<f64> = if m == n {
        budgets.iter().map(|p| p.sqrt()).collect()
    } else {
        vec![budgets.iter().sum::<f64>().sqrt(); n]
    };
    let dm = CMatrix::from_diagonal(&CVector::from_iterator(n, d.iter().map(|v| C64::new(*v, 0.0))));
    let a = linalg::hermitian_part(&(&dm * h.adjoint() * h * &dm));
    let bt: Vec<CMatrix> = forms.iter().zip(budgets).map(|(b, p)| (&dm * b * &dm).unscale(*p)).collect();
    let basis = hermitian_basis(n);
    let nb = basis.len();
    let c: Vec<Vec<f64>> = bt.iter().map(|b| basis.iter().map(|&e| trace_with_basis(b, e)).collect()).collect();
    let eye = CMatrix::identity(n, n);
    let slack = |x: &CMatrix| -> Vec<f64> { bt.iter().map(|b| 1.0 - (b * x).trace().re).collect() };
    // det(I + X A) = det(I + A^{1/2} X A^{1/2}), which is Hermitian.
    let a_root = linalg::hermitian_sqrt(&a);
    let objective = |x: &CMatrix| ln_det_pd(&(&eye + &a_root * x * &a_root));
    let phi = |x: &CMatrix, t: f64| -> Option<f64> {
        let s = slack(x);
        if s.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let ld = ln_det_pd(x)?;
        Some(t * objective(x)? + ld + s.iter().map(|v| v.ln()).sum::<f64>())
    };

    // Strictly feasible start.
    let tr_pos = bt.iter().map(|b| b.trace().re.max(0.0)).fold(0.0, f64::max);
    let mut delta = if tr_pos > 0.0 { 0.25 / tr_pos } else { 1.0 };
    let base = match start {
        Some(q) => {
            let dinv = CMatrix::from_diagonal(&CVector::from_iterator(n, d.iter().map(|v| C64::new(1.0 / v, 0.0))));
            (&dinv * q * &dinv).scale(0.5)
        }
        None => CMatrix::zeros(n, n),
    };
    let mut x = loop {
        let trial = &base + &eye * C64::new(delta, 0.0);
        if phi(&trial, 1.0).is_some() {
            break trial;
        }
        delta *= 0.5;
        if delta < 1e-30 {
            return None;
        }
    };

    let degree = (m + n) as f64;
    let mut t = (degree / objective(&x)?.abs().max(1.0)).max(1.0);
    let mut iterations = 0;
    loop {
        // Centering.
        for _ in 0..100 {
            iterations += 1;
            let s = slack(&x);
            let x_inv = linalg::inverse(&x, "barrier iterate").ok()?;
            let g = {
                let inner = linalg::inverse(&(&eye + &x * &a), "barrier objective").ok()?;
                linalg::hermitian_part(&(&a * inner))
            };
            let ge: Vec<CMatrix> = basis.iter().map(|&e| times_basis(&g, e)).collect();
            let xe: Vec<CMatrix> = basis.iter().map(|&e| times_basis(&x_inv, e)).collect();
            let mut grad = nalgebra::DVector::<f64>::zeros(nb);
            let mut hess = nalgebra::DMatrix::<f64>::zeros(nb, nb);
            for k in 0..nb {
                grad[k] = t * trace_with_basis(&g, basis[k]) + trace_with_basis(&x_inv, basis[k])
                    - (0..m).map(|i| c[i][k] / s[i]).sum::<f64>();
                for l in k..nb {
                    let v = t * (&ge[k] * &ge[l]).trace().re
                        + (&xe[k] * &xe[l]).trace().re
                        + (0..m).map(|i| c[i][k] * c[i][l] / (s[i] * s[i])).sum::<f64>();
                    hess[(k, l)] = v;
                    hess[(l, k)] = v;
                }
            }
            // Newton step for the concave barrier objective: (-Hessian) dx = grad.
            let dx = match nalgebra::Cholesky::new(hess.clone()) {
                Some(ch) => ch.solve(&grad),
                None => hess.lu().solve(&grad)?,
            };
            let decrement = grad.dot(&dx);
            if !(decrement > 1e-10) {
                break;
            }
            let step_mat = from_basis(dx.as_slice(), &basis, n);
            let f0 = phi(&x, t)?;
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial = &x + step_mat.scale(step);
                if let Some(f1) = phi(&trial, t) {
                    if f1 >= f0 + 0.25 * step * decrement {
                        x = trial;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let f = objective(&x)?;
        let gap = degree / t / f.abs().max(1.0);
        if gap <= tol || iterations > 2000 {
            let s = slack(&x);
            let q = &dm * &x * &dm;
            return Some(BarrierSolution {
                q: linalg::hermitian_part(&q),
                nats: f,
                gap,
                multipliers: s.iter().zip(budgets).map(|(v, p)| 1.0 / (t * v * p)).collect(),
                iterations,
            });
        }
        t *= 8.0;
    }
}

/// `max log2 det(I + H Q H^H)` over `Q >= 0` with `tr(B_n Q) <= p_n` for every node.
///
/// The forms `B_n` must be Hermitian with a positive definite sum and the budgets
/// positive. Solved in the dual: for multipliers `mu` the inner problem is waterfilling
/// in the metric `M = sum mu_n B_n`; the multipliers follow projected gradient steps
/// with Barzilai–Borwein step sizes and backtracking. Every dual iterate yields a
/// feasible primal point by scaling, so the returned duality gap certifies optimality.
pub fn log_det_max(
    h: &CMatrix,
    forms: &[CMatrix],
    budgets: &[f64],
    opts: &LogDetOptions,
) -> Result<LogDetSolution> {
    log_det_max_from(h, forms, budgets, opts, None)
}

/// [`log_det_max`] with optional starting multipliers (e.g. from a neighbouring bin);
/// the better of the warm and the common-multiplier start is used.
pub fn log_det_max_from(
    h: &CMatrix,
    forms: &[CMatrix],
    budgets: &[f64],
    opts: &LogDetOptions,
    warm: Option<&[f64]>,
) -> Result<LogDetSolution> {
    let n = h.ncols();
    if forms.len() != budgets.len() || forms.iter().any(|b| b.nrows() != n || b.ncols() != n) {
        return domain("one n x n form per budget is required");
    }
    if budgets.iter().any(|p| !(*p > 0.0)) {
        return domain("per-node budgets must be positive");
    }
    let nodes = budgets.len();
    if h.norm() == 0.0 || n == 0 {
        return Ok(LogDetSolution {
            q: CMatrix::zeros(n, n),
            rate: 0.0,
            kkt_residual: 0.0,
            multipliers: vec![0.0; nodes],
            iterations: 0,
        });
    }
    // Start from the best common multiplier (the sum-power relaxation): with
    // `M = t B`, `B = sum B_n`, the inner problem is waterfilling over the eigenvalues
    // of `B^{-1/2} H^H H B^{-1/2}` with total power `sum p_n` and water level `1/t`.
    let mut b_sum = CMatrix::zeros(n, n);
    for b in forms {
        b_sum += b;
    }
    let b_isqrt = linalg::hermitian_pow(&b_sum, -0.5, "sum of the per-node power forms")?;
    let hb = h * &b_isqrt;
    let (lam, _) = linalg::hermitian_eigen(&(hb.adjoint() * &hb));
    let inv: Vec<f64> = lam.iter().filter(|l| **l > 0.0).map(|l| 1.0 / l).collect();
    let level = waterfill_level(&inv, budgets.iter().sum());
    let hi = 1.0 / level;
    let mut mu = vec![hi; nodes];
    let mut cur = dual_point(h, forms, budgets, &mu)
        .ok_or_else(|| crate::Error::Numerical("common multiplier left the dual domain".into()))?;
    if let Some(w) = warm.filter(|w| w.len() == nodes && w.iter().all(|v| v.is_finite() && *v >= 0.0)) {
        if let Some(d) = dual_point(h, forms, budgets, w) {
            if d.value < cur.value {
                mu = w.to_vec();
                cur = d;
            }
        }
    }

    let primal = |q: &CMatrix| {
        let qf = scale_feasible(q, forms, budgets);
        let f = log_det_nats(h, &qf);
        if n != nodes {
            return (qf, f);
        }
        // One node far over budget would shrink everything under uniform scaling;
        // shrinking that node's own coordinate first keeps the others' contribution.
        let qs = scale_feasible(&shrink_nodes(q, forms, budgets), forms, budgets);
        let fs = log_det_nats(h, &qs);
        if fs > f {
            (qs, fs)
        } else {
            (qf, f)
        }
    };
    let (mut best_q, mut best_f) = primal(&cur.q);
    let gap_of = |dual: f64, f: f64| (dual - f).max(0.0) / f.abs().max(1.0);
    let mut step = mu.iter().cloned().fold(0.0, f64::max) / cur.grad.iter().map(|g| g.abs()).fold(1e-300, f64::max);
    let mut iterations = 0;
    let mut gap = gap_of(cur.value, best_f);
    let mut best_gap = gap;
    let mut stalled = 0;
    while iterations < opts.max_iters && gap > opts.tolerance && stalled < STALL_ITERS {
        iterations += 1;
        let mut accepted = None;
        let mut t = step;
        for _ in 0..60 {
            let trial: Vec<f64> = mu
                .iter()
                .zip(&cur.grad)
                .map(|(m, g)| (m - t * g).max(0.0))
                .collect();
            if let Some(d) = dual_point(h, forms, budgets, &trial) {
                let dm: f64 = trial.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
                let lin: f64 = trial.iter().zip(&mu).zip(&cur.grad).map(|((a, b), g)| (a - b) * g).sum();
                if d.value <= cur.value + lin + 0.5 * dm / t + 1e-15 * cur.value.abs() {
                    accepted = Some((trial, d));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, d)) = accepted else {
            break;
        };
        // Barzilai–Borwein step for the next iteration.
        let s: Vec<f64> = trial.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = d.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).min(1e6 * t) } else { 2.0 * t };
        mu = trial;
        cur = d;
        let (q, f) = primal(&cur.q);
        if f > best_f {
            best_f = f;
            best_q = q;
        }
        gap = gap_of(cur.value, best_f);
        if gap < best_gap * (1.0 - 1e-3) {
            best_gap = gap;
            stalled = 0;
        } else {
            stalled += 1;
        }
    }
    if gap > opts.tolerance {
        // The dual stalls when its optimum sits at the edge of the domain (a node whose
        // power form is nearly outside the span of the others); finish in the primal.
        if let Some(b) = log_det_barrier(h, forms, budgets, opts.tolerance, Some(&best_q)) {
            iterations += b.iterations;
            let certified = (b.nats + b.gap * b.nats.abs().max(1.0)).min(cur.value);
            if b.nats >= best_f {
                best_f = b.nats;
                best_q = b.q;
                mu = b.multipliers;
            }
            gap = gap_of(certified, best_f);
        }
    }
    if gap > 1e-5 {
        log::warn!("log-det solver stopped with relative duality gap {gap:.3e}");
    }
    if !best_f.is_finite() {
        return numerical("log-det solver produced a non-finite objective");
    }
    Ok(LogDetSolution {
        q: best_q,
        rate: best_f / std::f64::consts::LN_2,
        kkt_residual: gap,
        multipliers: mu,
        iterations,
    })
}

/// One uplink bin of a cooperative link, in the generator-EMF domain.
///
/// `h` is the whitened channel `K^{-1/2} H` (N_R x N_T) in terms of `x`; `z_t_in` the
/// generators' input impedance. With EMFs `v_g` the transmit signal is
/// `x = (Re Z_T^in)^{1/2} (Z_T^in + R I)^{-1} v_g`, so a silent node (zero EMF) still
/// loads the network like the idle generator it is.
#[derive(Debug, Clone)]
pub struct CoopBin {
    pub h: CMatrix,
    pub z_t_in: CMatrix,
}

impl CoopBin {
    fn emf_map(&self, r: f64) -> Result<CMatrix> {
        let n = self.z_t_in.nrows();
        let root = linalg::hermitian_pow(&linalg::re(&self.z_t_in), 0.5, "Re{Z_T^in}")?;
        let inv = linalg::inverse(
            &(&self.z_t_in + CMatrix::identity(n, n) * C64::new(r, 0.0)),
            "Z_T^in + R I",
        )?;
        Ok(root * inv)
    }

    /// Per-watt SNR for each node transmitting alone (all others silent but present).
    pub fn siso_gains(&self, r: f64) -> Result<Vec<f64>> {
        let t = self.emf_map(r)?;
        let forms = crate::channel::per_generator_power_forms(&self.z_t_in)?;
        let ht = &self.h * &t;
        Ok((0..self.z_t_in.nrows())
            .map(|n| {
                let col = t.column(n).into_owned();
                let power = forms[n].quadratic_form_real(&col);
                if power > 0.0 {
                    ht.column(n).norm_squared() / power
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Best rate (bit/s/Hz) with node powers `budgets`; zero budgets mean silent nodes.
    pub fn solve(&self, budgets: &[f64], r: f64, opts: &LogDetOptions) -> Result<LogDetSolution> {
        self.solve_from(budgets, r, opts, None)
    }

    /// [`Self::solve`] warm-started from per-node multipliers.
    pub fn solve_from(
        &self,
        budgets: &[f64],
        r: f64,
        opts: &LogDetOptions,
        warm: Option<&[f64]>,
    ) -> Result<LogDetSolution> {
        let n = self.z_t_in.nrows();
        if budgets.len() != n {
            return domain("one budget per node is required");
        }
        let active: Vec<usize> = (0..n).filter(|&i| budgets[i] > 0.0).collect();
        if active.is_empty() {
            return Ok(LogDetSolution {
                q: CMatrix::zeros(n, n),
                rate: 0.0,
                kkt_residual: 0.0,
                multipliers: vec![0.0; n],
                iterations: 0,
            });
        }
        let t = self.emf_map(r)?;
        let t_a = CMatrix::from_fn(n, active.len(), |i, j| t[(i, active[j])]);
        let forms = crate::channel::per_generator_power_forms(&self.z_t_in)?;
        let reduced: Vec<CMatrix> = active
            .iter()
            .map(|&i| linalg::hermitian_part(&(t_a.adjoint() * &forms[i] * &t_a)))
            .collect();
        let b: Vec<f64> = active.iter().map(|&i| budgets[i]).collect();
        let warm_active: Option<Vec<f64>> = warm.map(|w| active.iter().map(|&i| w[i]).collect());
        let sol = log_det_max_from(&(&self.h * &t_a), &reduced, &b, opts, warm_active.as_deref())?;
        let q = &t_a * &sol.q * t_a.adjoint();
        let mut multipliers = vec![0.0; n];
        for (k, &i) in active.iter().enumerate() {
            multipliers[i] = sol.multipliers[k];
        }
        Ok(LogDetSolution {
            q: linalg::hermitian_part(&q),
            multipliers,
            ..sol
        })
    }
}

trait QuadraticForm {
    fn quadratic_form_real(&self, v: &CVector) -> f64;
}

impl QuadraticForm for CMatrix {
    fn quadratic_form_real(&self, v: &CVector) -> f64 {
        v.dotc(&(self * v)).re
    }
}

const WARM_CHUNK: usize = 32;

/// Cooperative uplink rate over bins with per-node budgets (W).
///
/// With `heuristic_alloc` each node first waterfills its budget over its own SISO
/// gains; otherwise each node spreads its budget evenly over the bins in `band`.
/// Every bin is then solved jointly under the resulting per-node powers.
pub fn coop_uplink_rate(
    bins: &[CoopBin],
    band: &[bool],
    budgets: &[f64],
    heuristic_alloc: bool,
    w: f64,
    r: f64,
    opts: &LogDetOptions,
) -> Result<RateResult> {
    let n_bins = bins.len();
    if band.len() != n_bins {
        return domain("band mask and bins differ in length");
    }
    let n_nodes = budgets.len();
    let scheme = Some(if heuristic_alloc { Scheme::Elaborate } else { Scheme::Simple });
    if n_bins == 0 || budgets.iter().all(|p| *p <= 0.0) {
        return Ok(RateResult::zero(n_bins, n_nodes, scheme));
    }
    let gains: Vec<Vec<f64>> = bins.iter().map(|b| b.siso_gains(r)).collect::<Result<_>>()?;
    let mut alloc = vec![vec![0.0; n_nodes]; n_bins];
    for node in 0..n_nodes {
        if budgets[node] <= 0.0 {
            continue;
        }
        let g: Vec<f64> = gains.iter().map(|g| g[node]).collect();
        let per_bin = if heuristic_alloc {
            waterfill(&g, budgets[node], w)?
        } else {
            flat_allocation(&g, band, budgets[node], w)?
        };
        for (k, p) in per_bin.per_bin_power.iter().enumerate() {
            alloc[k][node] = p[0];
        }
    }
    // Fixed chunks run in parallel; within a chunk each bin warm-starts from its
    // predecessor, so results do not depend on scheduling.
    let solved: Vec<Result<LogDetSolution>> = {
        use rayon::prelude::*;
        let chunks: Vec<Vec<Result<LogDetSolution>>> = bins
            .par_chunks(WARM_CHUNK)
            .zip(alloc.par_chunks(WARM_CHUNK))
            .map(|(bs, ps)| {
                let mut warm: Option<Vec<f64>> = None;
                bs.iter()
                    .zip(ps)
                    .map(|(b, p)| {
                        let s = b.solve_from(p, r, opts, warm.as_deref())?;
                        if s.iterations > 0 {
                            warm = Some(s.multipliers.clone());
                        }
                        Ok(s)
                    })
                    .collect()
            })
            .collect();
        chunks.into_iter().flatten().collect()
    };
    let mut per_bin_rate = Vec::with_capacity(n_bins);
    let mut kkt: f64 = 0.0;
    for s in solved {
        let s = s?;
        per_bin_rate.push(w * s.rate);
        kkt = kkt.max(s.kkt_residual);
    }
    Ok(RateResult {
        total_rate: per_bin_rate.iter().sum(),
        unallocated: false,
        per_bin_power: alloc,
        per_bin_rate,
        scheme,
        kkt_residual: kkt,
    })
}
