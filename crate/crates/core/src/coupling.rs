//! Mutual impedances between coils, antenna impedance matrices and relay elimination.
//!
//! Mutual impedances come from the retarded Neumann double integral
//! `(j omega mu / 4 pi) \oint\oint e^{-jkd}/d ds_m . ds_n` (nested Gauss–Legendre per
//! turn, doubling until the result moves by less than 1e-4), or from the dipole form
//! once the separation exceeds a multiple of the larger coil diameter.
//!
//! Integral kernels are stored as a Taylor expansion in the wavenumber around the
//! centre of the frequency band they were built for, so a pair is integrated once
//! and then evaluated at any frequency of the band at negligible cost.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::coil_models::{CoilCircuit, CoilGeometry};
use crate::error::{domain, numerical, Result};
use crate::linalg::{self, J};
use crate::quadrature::gauss_legendre_interval;
use crate::{omega, wavenumber, CMatrix, Vec3, C64, MU_0};

/// Default switchover: dipole form beyond this many larger-coil diameters.
pub const DEFAULT_DIPOLE_BEYOND: f64 = 4.0;
/// Termination used to represent an open relay port.
pub const OPEN_CIRCUIT_OHMS: f64 = 1e12;

const INITIAL_POINTS_PER_TURN: usize = 16;
const MAX_POINTS_PER_TURN: usize = 512;
const QUADRATURE_TOLERANCE: f64 = 1e-4;
const MAX_EXPANSION_TERMS: usize = 60;
/// Largest `k d` for which kernels expand about zero wavenumber.
const SMALL_PHASE: f64 = 0.5;

/// A coil together with the parametric curve of its wire.
///
/// Solenoids follow a constant-pitch helix closed by a straight return lead parallel
/// to the axis; single-turn loops are circles.
#[derive(Debug, Clone)]
pub struct CoilPose {
    pub geometry: CoilGeometry,
    center: Vec3,
    axis: Vec3,
    u: Vec3,
    v: Vec3,
}

/// Quadrature nodes along a curve: positions and weighted line elements.
#[derive(Debug, Clone)]
pub struct CurveNodes {
    pub positions: Vec<Vec3>,
    pub elements: Vec<Vec3>,
}

impl CoilPose {
    pub fn new(geometry: CoilGeometry) -> Result<Self> {
        geometry.validate()?;
        let axis = geometry.axis_vec();
        let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u = axis.cross(&helper).normalize();
        let v = axis.cross(&u);
        Ok(Self {
            center: geometry.center_vec(),
            axis,
            u,
            v,
            geometry,
        })
    }

    fn pitch_per_radian(&self) -> f64 {
        if self.geometry.is_solenoid() {
            self.geometry.pitch() / (2.0 * PI)
        } else {
            0.0
        }
    }

    /// Point on the winding at parameter `t` in `[0, 2 pi turns]`.
    pub fn point(&self, t: f64) -> Vec3 {
        let a = self.geometry.loop_radius;
        let z = self.pitch_per_radian() * t - 0.5 * self.geometry.height();
        self.center + self.u * (a * t.cos()) + self.v * (a * t.sin()) + self.axis * z
    }

    fn tangent(&self, t: f64) -> Vec3 {
        let a = self.geometry.loop_radius;
        self.u * (-a * t.sin()) + self.v * (a * t.cos()) + self.axis * self.pitch_per_radian()
    }

    /// Length of the winding (helix or circle), by quadrature.
    pub fn curve_length(&self) -> f64 {
        let turns = self.geometry.turns as usize;
        let mut total = 0.0;
        for m in 0..turns {
            let t0 = 2.0 * PI * m as f64;
            let (ts, ws) = gauss_legendre_interval(32, t0, t0 + 2.0 * PI);
            total += ts.iter().zip(&ws).map(|(&t, w)| w * self.tangent(t).norm()).sum::<f64>();
        }
        total
    }

    /// Quadrature nodes with `n` points per turn (plus the return lead for solenoids).
    pub fn nodes(&self, n: usize) -> CurveNodes {
        let turns = self.geometry.turns as usize;
        let mut positions = Vec::with_capacity(n * turns + n / 2);
        let mut elements = Vec::with_capacity(n * turns + n / 2);
        for m in 0..turns {
            let t0 = 2.0 * PI * m as f64;
            let (ts, ws) = gauss_legendre_interval(n, t0, t0 + 2.0 * PI);
            for (&t, &w) in ts.iter().zip(&ws) {
                positions.push(self.point(t));
                elements.push(self.tangent(t) * w);
            }
        }
        if self.geometry.is_solenoid() {
            let end = self.point(2.0 * PI * turns as f64);
            let start = self.point(0.0);
            let dir = start - end;
            let (ss, ws) = gauss_legendre_interval((n / 2).max(8), 0.0, 1.0);
            for (&s, &w) in ss.iter().zip(&ws) {
                positions.push(end + dir * s);
                elements.push(dir * w);
            }
        }
        CurveNodes {
            positions,
            elements,
        }
    }
}

/// Orientation factors of the dipole coupling between two coils.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationFactors {
    pub j_nf: f64,
    pub j_ff: f64,
    /// Unit vector from coil m to coil n.
    pub direction: Vec3,
    pub distance: f64,
}

impl OrientationFactors {
    pub fn new(m: &CoilGeometry, n: &CoilGeometry) -> Result<Self> {
        let delta = n.center_vec() - m.center_vec();
        let distance = delta.norm();
        if !(distance > 0.0) {
            return domain("coil centres coincide: dipole coupling undefined at d = 0");
        }
        let e = delta / distance;
        let (om, on) = (m.axis_vec(), n.axis_vec());
        let (em, en) = (om.dot(&e), on.dot(&e));
        let dot = om.dot(&on);
        Ok(Self {
            j_nf: 1.5 * em * en - 0.5 * dot,
            j_ff: dot - em * en,
            direction: e,
            distance,
        })
    }
}

/// Dipole approximation of the mutual impedance.
pub fn mutual_impedance_dipole(m: &CoilGeometry, n: &CoilGeometry, f: f64) -> Result<C64> {
    let factors = OrientationFactors::new(m, n)?;
    Ok(dipole_from_factors(
        &factors,
        m.turns as f64 * m.area() * n.turns as f64 * n.area(),
        f,
    ))
}

fn dipole_from_factors(fac: &OrientationFactors, moment_product: f64, f: f64) -> C64 {
    let k = wavenumber(f);
    let kd = k * fac.distance;
    let l_bar = MU_0 / (2.0 * PI) * moment_product * k.powi(3);
    let near = C64::new(1.0 / kd.powi(3), 1.0 / (kd * kd)) * fac.j_nf;
    let far = C64::new(fac.j_ff / (2.0 * kd), 0.0);
    J * omega(f) * l_bar * (near + far) * C64::from_polar(1.0, -kd)
}

/// A pair coupling that can be evaluated anywhere in its frequency band.
#[derive(Debug, Clone)]
pub enum PairKernel {
    Dipole {
        factors: OrientationFactors,
        moment_product: f64,
    },
    /// `I(k) = sum_n (-j (k - k_c))^n / n! * moments[n]` for the Neumann integral `I`.
    Integral {
        k_center: f64,
        k_half_width: f64,
        moments: Vec<C64>,
        points_per_turn: usize,
    },
}

impl PairKernel {
    /// Mutual impedance at `f` (ohm).
    pub fn evaluate(&self, f: f64) -> C64 {
        match self {
            PairKernel::Dipole {
                factors,
                moment_product,
            } => dipole_from_factors(factors, *moment_product, f),
            PairKernel::Integral {
                k_center, moments, ..
            } => {
                let c = -J * (wavenumber(f) - k_center);
                J * omega(f) * MU_0 / (4.0 * PI) * horner_exp(moments, c)
            }
        }
    }

    /// True when `f` lies in the band the kernel was built for (always true for dipoles).
    pub fn covers(&self, f: f64) -> bool {
        match self {
            PairKernel::Dipole { .. } => true,
            PairKernel::Integral {
                k_center,
                k_half_width,
                ..
            } => (wavenumber(f) - k_center).abs() <= k_half_width * (1.0 + 1e-9) + 1e-12,
        }
    }
}

fn horner_exp(moments: &[C64], c: C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (n, m) in moments.iter().enumerate().rev() {
        acc = acc * c / (n as f64 + 1.0) + m;
    }
    acc
}

fn check_separation(a: &CoilGeometry, b: &CoilGeometry) -> Result<()> {
    let d = (a.center_vec() - b.center_vec()).norm();
    let min = 2.0 * (a.wire_radius + b.wire_radius);
    if !(d > min) {
        return domain(format!(
            "coils intersect: centre separation {d:.3e} m <= {min:.3e} m"
        ));
    }
    Ok(())
}

struct Moments {
    values: Vec<C64>,
    raw_scale: f64,
}

fn neumann_moments(a: &CurveNodes, b: &CurveNodes, k_center: f64, k_half: f64) -> Moments {
    let mut d_max: f64 = 0.0;
    for pa in &a.positions {
        for pb in &b.positions {
            d_max = d_max.max((pa - pb).norm());
        }
    }
    let rho = k_half * d_max;
    let mut terms = 1;
    let mut bound = 1.0;
    while terms < MAX_EXPANSION_TERMS {
        bound *= rho / terms as f64;
        if bound < 1e-18 {
            break;
        }
        terms += 1;
    }
    let mut raw_scale = 0.0;
    if k_center == 0.0 {
        // Real moments: no phase factor to evaluate per node pair.
        let mut values = vec![0.0; terms];
        for (pa, sa) in a.positions.iter().zip(&a.elements) {
            for (pb, sb) in b.positions.iter().zip(&b.elements) {
                let d = (pa - pb).norm();
                let mut p = sa.dot(sb) / d;
                raw_scale += p.abs();
                values[0] += p;
                for v in values.iter_mut().skip(1) {
                    p *= d;
                    *v += p;
                }
            }
        }
        return Moments {
            values: values.into_iter().map(|v| C64::new(v, 0.0)).collect(),
            raw_scale,
        };
    }
    let mut values = vec![C64::new(0.0, 0.0); terms];
    for (pa, sa) in a.positions.iter().zip(&a.elements) {
        for (pb, sb) in b.positions.iter().zip(&b.elements) {
            let d = (pa - pb).norm();
            let w = sa.dot(sb);
            raw_scale += w.abs() / d;
            let mut p = C64::from_polar(w / d, -k_center * d);
            values[0] += p;
            for v in values.iter_mut().skip(1) {
                p *= d;
                *v += p;
            }
        }
    }
    Moments { values, raw_scale }
}

/// Largest node separation bound: centre distance plus both enclosing radii.
fn separation_bound(a: &CoilGeometry, b: &CoilGeometry) -> f64 {
    let reach = |c: &CoilGeometry| (c.loop_radius + c.wire_radius).hypot(0.5 * c.height()) + c.wire_radius;
    (a.center_vec() - b.center_vec()).norm() + reach(a) + reach(b)
}

/// Builds the integral kernel for a band of wavenumbers `[k_lo, k_hi]`.
fn integral_kernel(a: &CoilPose, b: &CoilPose, k_lo: f64, k_hi: f64) -> Result<PairKernel> {
    check_separation(&a.geometry, &b.geometry)?;
    // Electrically tiny pairs expand about k = 0, which keeps the moments real.
    let (k_center, k_half) = if k_hi * separation_bound(&a.geometry, &b.geometry) < SMALL_PHASE {
        (0.0, k_hi)
    } else {
        (0.5 * (k_lo + k_hi), 0.5 * (k_hi - k_lo))
    };
    let probes = [k_lo, k_center, k_hi];
    let eval = |m: &[C64], k: f64| horner_exp(m, -J * (k - k_center));
    let mut n = INITIAL_POINTS_PER_TURN;
    let mut prev: Option<Vec<C64>> = None;
    loop {
        let mom = neumann_moments(&a.nodes(n), &b.nodes(n), k_center, k_half);
        let vals: Vec<C64> = probes.iter().map(|&k| eval(&mom.values, k)).collect();
        if let Some(p) = &prev {
            let converged = vals.iter().zip(p).all(|(v, w)| {
                (v - w).norm() <= QUADRATURE_TOLERANCE * v.norm().max(1e-10 * mom.raw_scale)
            });
            if converged {
                return Ok(PairKernel::Integral {
                    k_center,
                    k_half_width: k_half,
                    moments: mom.values,
                    points_per_turn: n,
                });
            }
        }
        if n >= MAX_POINTS_PER_TURN {
            return numerical(format!(
                "mutual impedance quadrature did not converge at {n} points per turn"
            ));
        }
        prev = Some(vals);
        n *= 2;
    }
}

/// Mutual impedance from the retarded double line integral at a single frequency.
pub fn mutual_impedance_integral(a: &CoilPose, b: &CoilPose, f: f64) -> Result<C64> {
    let k = wavenumber(f);
    Ok(integral_kernel(a, b, k, k)?.evaluate(f))
}

/// Magnetoquasistatic Neumann mutual inductance (H), same quadrature with kernel `1/d`.
pub fn neumann_mutual_inductance(a: &CoilPose, b: &CoilPose) -> Result<f64> {
    match integral_kernel(a, b, 0.0, 0.0)? {
        PairKernel::Integral { moments, .. } => Ok(MU_0 / (4.0 * PI) * moments[0].re),
        PairKernel::Dipole { .. } => unreachable!(),
    }
}

/// Chooses and builds the kernel for one pair.
pub fn pair_kernel(
    a: &CoilPose,
    b: &CoilPose,
    band: (f64, f64),
    dipole_beyond: f64,
) -> Result<PairKernel> {
    let d = (a.geometry.center_vec() - b.geometry.center_vec()).norm();
    let larger = a.geometry.diameter().max(b.geometry.diameter());
    if d > dipole_beyond * larger {
        Ok(PairKernel::Dipole {
            factors: OrientationFactors::new(&a.geometry, &b.geometry)?,
            moment_product: a.geometry.turns as f64
                * a.geometry.area()
                * b.geometry.turns as f64
                * b.geometry.area(),
        })
    } else {
        integral_kernel(a, b, wavenumber(band.0), wavenumber(band.1))
    }
}

/// Pairwise couplings of a fixed set of coils over a frequency band.
#[derive(Debug, Clone)]
pub struct CouplingModel {
    poses: Vec<CoilPose>,
    /// `rows[i][j]` couples coil `i` with coil `j < i`.
    rows: Vec<Arc<Vec<PairKernel>>>,
    band: (f64, f64),
    dipole_beyond: f64,
}

impl CouplingModel {
    pub fn new(coils: &[CoilGeometry], band: (f64, f64), dipole_beyond: f64) -> Result<Self> {
        let empty = Self {
            poses: Vec::new(),
            rows: Vec::new(),
            band,
            dipole_beyond,
        };
        empty.extend(coils)
    }

    /// Adds coils, reusing every existing pair kernel.
    pub fn extend(&self, extra: &[CoilGeometry]) -> Result<Self> {
        if !(self.band.0 > 0.0 && self.band.1 >= self.band.0) {
            return domain(format!("invalid frequency band {:?}", self.band));
        }
        let mut poses = self.poses.clone();
        let mut rows = self.rows.clone();
        for geom in extra {
            let pose = CoilPose::new(geom.clone())?;
            let row = poses
                .iter()
                .map(|other| pair_kernel(&pose, other, self.band, self.dipole_beyond))
                .collect::<Result<Vec<_>>>()?;
            poses.push(pose);
            rows.push(Arc::new(row));
        }
        Ok(Self {
            poses,
            rows,
            band: self.band,
            dipole_beyond: self.dipole_beyond,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn band(&self) -> (f64, f64) {
        self.band
    }

    pub fn geometry(&self, i: usize) -> &CoilGeometry {
        &self.poses[i].geometry
    }

    pub fn geometries(&self) -> Vec<CoilGeometry> {
        self.poses.iter().map(|p| p.geometry.clone()).collect()
    }

    pub fn kernel(&self, i: usize, j: usize) -> &PairKernel {
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        &self.rows[hi][lo]
    }

    fn check_band(&self, f: f64) -> Result<()> {
        let tol = 1e-9 * self.band.1;
        if f < self.band.0 - tol || f > self.band.1 + tol {
            return domain(format!(
                "frequency {f:.6e} Hz outside the coupling model band [{:.6e}, {:.6e}]",
                self.band.0, self.band.1
            ));
        }
        Ok(())
    }

    pub fn circuits(&self, f: f64) -> Result<Vec<CoilCircuit>> {
        self.poses
            .iter()
            .map(|p| CoilCircuit::evaluate(&p.geometry, f))
            .collect()
    }

    /// `Z_bar`: series branches on the diagonal, mutual impedances off it.
    pub fn z_bar(&self, f: f64, circuits: &[CoilCircuit]) -> Result<CMatrix> {
        self.check_band(f)?;
        let n = self.len();
        let mut z = CMatrix::zeros(n, n);
        for i in 0..n {
            z[(i, i)] = circuits[i].series_impedance();
            for j in 0..i {
                let zij = self.rows[i][j].evaluate(f);
                z[(i, j)] = zij;
                z[(j, i)] = zij;
            }
        }
        Ok(z)
    }
}

/// Adds the coil self-capacitances: `Z_A = (Z_bar^{-1} + j omega diag(C))^{-1}`.
pub fn add_self_capacitance(z_bar: &CMatrix, caps: &[f64], f: f64) -> Result<CMatrix> {
    let n = z_bar.nrows();
    let w = omega(f);
    // (I + Z_bar jwC)^{-1} Z_bar avoids inverting Z_bar itself.
    let mut lhs = CMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            lhs[(i, j)] += z_bar[(i, j)] * J * w * caps[j];
        }
    }
    let z = linalg::solve(&lhs, z_bar, "antenna matrix (self-capacitance)")?;
    Ok((&z + z.transpose()).scale(0.5))
}

/// Assembles `Z_A` for the given coils at one frequency.
pub fn assemble_antenna_matrix(
    coils: &[CoilPose],
    f: f64,
    use_dipole_beyond: f64,
) -> Result<CMatrix> {
    if coils.is_empty() {
        return domain("antenna matrix needs at least one coil");
    }
    let geoms: Vec<_> = coils.iter().map(|c| c.geometry.clone()).collect();
    let model = CouplingModel::new(&geoms, (f, f), use_dipole_beyond)?;
    let circuits = model.circuits(f)?;
    let z_bar = model.z_bar(f, &circuits)?;
    let cond = linalg::condition_estimate(&z_bar);
    if !cond.is_finite() || cond > 1e15 {
        return numerical(format!("Z_bar is singular (condition number {cond:.3e})"));
    }
    let caps: Vec<f64> = circuits.iter().map(|c| c.self_capacitance).collect();
    add_self_capacitance(&z_bar, &caps, f)
}

/// Eliminates terminated relay ports (the trailing block) from a full impedance matrix.
pub fn reduce_passive_relays(z_full: &CMatrix, n_active: usize, z_term: &CMatrix) -> Result<CMatrix> {
    let n = z_full.nrows();
    if z_full.ncols() != n || n_active > n {
        return domain("relay reduction: inconsistent partition");
    }
    let n_relay = n - n_active;
    if z_term.nrows() != n_relay || z_term.ncols() != n_relay {
        return domain(format!(
            "relay termination must be {n_relay}x{n_relay}, got {}x{}",
            z_term.nrows(),
            z_term.ncols()
        ));
    }
    if n_relay == 0 {
        return Ok(z_full.clone());
    }
    let (vals, _) = linalg::hermitian_eigen(&linalg::re(z_term));
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if vals.iter().any(|&v| v < -1e-12 * scale) {
        return domain("relay termination is not passive (Re Z_term has negative eigenvalues)");
    }
    let z_aa = linalg::block(z_full, 0, 0, n_active, n_active);
    let z_to = linalg::block(z_full, n_active, 0, n_relay, n_active);
    let z_rr = linalg::block(z_full, n_active, n_active, n_relay, n_relay) + z_term;
    let x = linalg::solve(&z_rr, &z_to, "relay reduction (Z_relays + Z_term)")?;
    let z = z_aa - z_to.transpose() * x;
    Ok((&z + z.transpose()).scale(0.5))
}

/// Capacitance that resonates an inductance at `f`: `1 / (omega^2 L)`.
pub fn resonance_capacitance(inductance: f64, f: f64) -> f64 {
    1.0 / (omega(f).powi(2) * inductance)
}

/// The whole coil network at one frequency.
#[derive(Debug, Clone)]
pub struct AntennaState {
    pub frequency: f64,
    pub circuits: Vec<CoilCircuit>,
    pub z_bar: CMatrix,
    /// All coils including self-capacitances.
    pub z_full: CMatrix,
    /// Open-circuit port voltages per unit series EMF in each coil: `(I + Z_bar j omega C)^{-1}`.
    pub d_c: CMatrix,
}

/// The network seen at a subset of coil ports, every other coil closed by a termination.
#[derive(Debug, Clone)]
pub struct ReducedAntenna {
    pub ports: Vec<usize>,
    pub terminated: Vec<usize>,
    pub terminations: Vec<C64>,
    pub z_a: CMatrix,
    /// Open-circuit port voltage per unit series EMF in each coil (all coils).
    pub emf_transfer: CMatrix,
    /// Open-circuit port voltage per unit EMF in series with each termination.
    pub termination_transfer: CMatrix,
}

impl AntennaState {
    pub fn new(model: &CouplingModel, f: f64) -> Result<Self> {
        let n = model.len();
        let circuits = model.circuits(f)?;
        let z_bar = model.z_bar(f, &circuits)?;
        let caps: Vec<f64> = circuits.iter().map(|c| c.self_capacitance).collect();
        let w = omega(f);
        let mut lhs = CMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                lhs[(i, j)] += z_bar[(i, j)] * J * w * caps[j];
            }
        }
        let d_c = linalg::inverse(&lhs, "antenna matrix (self-capacitance)")?;
        let z = &d_c * &z_bar;
        let z_full = (&z + z.transpose()).scale(0.5);
        Ok(Self {
            frequency: f,
            circuits,
            z_bar,
            z_full,
            d_c,
        })
    }

    pub fn len(&self) -> usize {
        self.circuits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circuits.is_empty()
    }

    /// Keeps `ports` (in that order) and closes every other coil `i` with `terminations[i]`.
    pub fn reduce(&self, ports: &[usize], terminations: &[C64]) -> Result<ReducedAntenna> {
        let n = self.len();
        if terminations.len() != n {
            return domain(format!("need {n} terminations, got {}", terminations.len()));
        }
        let mut is_port = vec![false; n];
        for &p in ports {
            if p >= n || is_port[p] {
                return domain(format!("invalid or repeated port index {p}"));
            }
            is_port[p] = true;
        }
        let terminated: Vec<usize> = (0..n).filter(|&i| !is_port[i]).collect();
        let pick = |m: &CMatrix, rows: &[usize], cols: &[usize]| {
            CMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
        };
        let all: Vec<usize> = (0..n).collect();
        let z_pp = pick(&self.z_full, ports, ports);
        let dc_p = pick(&self.d_c, ports, &all);
        let term: Vec<C64> = terminated.iter().map(|&i| terminations[i]).collect();
        if terminated.is_empty() {
            return Ok(ReducedAntenna {
                ports: ports.to_vec(),
                terminated,
                terminations: term,
                z_a: z_pp,
                emf_transfer: dc_p,
                termination_transfer: CMatrix::zeros(ports.len(), 0),
            });
        }
        let z_pt = pick(&self.z_full, ports, &terminated);
        let mut z_tt = pick(&self.z_full, &terminated, &terminated);
        for (i, z) in term.iter().enumerate() {
            z_tt[(i, i)] += z;
        }
        // G = Z_pt (Z_tt + Z_term)^{-1}, via the transposed system.
        let g = linalg::solve(&z_tt.transpose(), &z_pt.transpose(), "port reduction (Z_terminated + Z_term)")?
            .transpose();
        let z = &z_pp - &g * z_pt.transpose();
        let z_a = (&z + z.transpose()).scale(0.5);
        let emf_transfer = dc_p - &g * pick(&self.d_c, &terminated, &all);
        Ok(ReducedAntenna {
            ports: ports.to_vec(),
            terminated,
            terminations: term,
            z_a,
            emf_transfer,
            termination_transfer: g,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::elliptic_ke;

    fn loop_at(z: f64, axis: Vec3, radius: f64) -> CoilGeometry {
        CoilGeometry::single_turn(Vec3::new(0.0, 0.0, z), axis, radius, radius * 1e-2)
    }

    fn maxwell_coaxial(a: f64, b: f64, d: f64) -> f64 {
        let k2 = 4.0 * a * b / ((a + b).powi(2) + d * d);
        let k = k2.sqrt();
        let (kk, ee) = elliptic_ke(k);
        MU_0 * (a * b).sqrt() * ((2.0 / k - k) * kk - 2.0 / k * ee)
    }

    #[test]
    fn helix_length_includes_pitch() {
        let g = CoilGeometry::sensor_solenoid(Vec3::zeros(), Vec3::z(), 350e-6, 5, 1.5);
        let pose = CoilPose::new(g.clone()).unwrap();
        let expected = 5.0 * (2.0 * PI * g.loop_radius).hypot(g.pitch());
        assert!((pose.curve_length() / expected - 1.0).abs() < 1e-3);
        assert!((pose.curve_length() / g.wire_length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_factor_special_cases() {
        let a = loop_at(0.0, Vec3::z(), 0.01);
        let b = loop_at(0.2, Vec3::z(), 0.01);
        let f = OrientationFactors::new(&a, &b).unwrap();
        assert!((f.j_nf - 1.0).abs() < 1e-15 && f.j_ff.abs() < 1e-15);
        let c = a.with_pose(Vec3::zeros(), Vec3::x());
        let d = a.with_pose(Vec3::new(0.0, 0.0, 0.2), Vec3::x());
        let g = OrientationFactors::new(&c, &d).unwrap();
        assert!((g.j_nf + 0.5).abs() < 1e-15 && (g.j_ff - 1.0).abs() < 1e-15);
        assert!(mutual_impedance_dipole(&a, &a, 1e9).is_err());
    }

    #[test]
    fn neumann_integral_matches_maxwell_formula() {
        let (a, b) = (0.01, 0.015);
        let p = CoilPose::new(loop_at(0.0, Vec3::z(), a)).unwrap();
        let q = CoilPose::new(loop_at(0.02, Vec3::z(), b)).unwrap();
        let m = neumann_mutual_inductance(&p, &q).unwrap();
        let oracle = maxwell_coaxial(a, b, 0.02);
        assert!((m / oracle - 1.0).abs() < 1e-6, "{m} vs {oracle}");
    }

    #[test]
    fn quasistatic_limit_is_omega_m() {
        let p = CoilPose::new(loop_at(0.0, Vec3::z(), 0.01)).unwrap();
        let q = CoilPose::new(loop_at(0.1, Vec3::z(), 0.01)).unwrap();
        let f = 1e3;
        let z = mutual_impedance_integral(&p, &q, f).unwrap();
        let m = maxwell_coaxial(0.01, 0.01, 0.1);
        assert!((z.im / (omega(f) * m) - 1.0).abs() < 5e-3);
        assert!(z.re.abs() < 1e-6 * z.im.abs());
    }

    #[test]
    fn integral_reciprocal_and_matches_dipole_far_away() {
        let a = loop_at(0.0, Vec3::z(), 0.01);
        let b = loop_at(0.2, Vec3::z(), 0.01);
        let (p, q) = (CoilPose::new(a.clone()).unwrap(), CoilPose::new(b.clone()).unwrap());
        let f = 750e6;
        let zi = mutual_impedance_integral(&p, &q, f).unwrap();
        let zj = mutual_impedance_integral(&q, &p, f).unwrap();
        assert!((zi - zj).norm() < 1e-12 * zi.norm());
        let zd = mutual_impedance_dipole(&a, &b, f).unwrap();
        assert!((zi - zd).norm() / zd.norm() < 0.02);
    }

    #[test]
    fn orthogonal_symmetric_pair_decouples() {
        let a = loop_at(0.0, Vec3::x(), 0.01);
        let b = loop_at(0.05, Vec3::z(), 0.01);
        let coax = loop_at(0.05, Vec3::x(), 0.01).with_pose(Vec3::new(0.05, 0.0, 0.0), Vec3::x());
        let p = CoilPose::new(a).unwrap();
        let z = mutual_impedance_integral(&p, &CoilPose::new(b).unwrap(), 750e6).unwrap();
        let zc = mutual_impedance_integral(&p, &CoilPose::new(coax).unwrap(), 750e6).unwrap();
        assert!(z.norm() < 1e-6 * zc.norm(), "{} vs {}", z.norm(), zc.norm());
    }

    #[test]
    fn band_kernel_matches_pointwise_integrals() {
        let a = CoilGeometry::sensor_solenoid(Vec3::zeros(), Vec3::z(), 350e-6, 5, 1.5);
        let b = a.with_pose(Vec3::new(0.3e-3, 0.2e-3, 0.7e-3), Vec3::new(1.0, 1.0, 0.0));
        let (p, q) = (CoilPose::new(a).unwrap(), CoilPose::new(b).unwrap());
        let kernel = pair_kernel(&p, &q, (500e6, 1e9), 4.0).unwrap();
        for f in [500e6, 640e6, 750e6, 1e9] {
            let direct = mutual_impedance_integral(&p, &q, f).unwrap();
            let z = kernel.evaluate(f);
            assert!((z - direct).norm() < 1e-4 * direct.norm(), "f={f}: {z} vs {direct}");
        }
    }

    #[test]
    fn intersecting_coils_are_rejected() {
        let a = loop_at(0.0, Vec3::z(), 0.01);
        let b = a.with_pose(Vec3::new(1e-6, 0.0, 0.0), Vec3::x());
        let p = CoilPose::new(a).unwrap();
        assert!(mutual_impedance_integral(&p, &CoilPose::new(b).unwrap(), 1e9).is_err());
    }

    #[test]
    fn single_coil_antenna_matrix_is_parallel_rlc() {
        let g = CoilGeometry::sensor_solenoid(Vec3::zeros(), Vec3::z(), 350e-6, 5, 1.5);
        let f = 750e6;
        let z = assemble_antenna_matrix(&[CoilPose::new(g.clone()).unwrap()], f, 4.0).unwrap();
        let c = CoilCircuit::evaluate(&g, f).unwrap();
        let expected = (c.series_impedance().inv() + J * omega(f) * c.self_capacitance).inv();
        assert!((z[(0, 0)] - expected).norm() < 1e-12 * expected.norm());
    }

    #[test]
    fn open_relays_leave_network_unchanged() {
        let coils: Vec<_> = (0..3)
            .map(|i| {
                CoilGeometry::sensor_solenoid(
                    Vec3::new(0.0, 0.0, i as f64 * 0.8e-3),
                    Vec3::z(),
                    350e-6,
                    5,
                    1.5,
                )
            })
            .collect();
        let model = CouplingModel::new(&coils, (750e6, 750e6), 4.0).unwrap();
        let circ = model.circuits(750e6).unwrap();
        let caps: Vec<f64> = circ.iter().map(|c| c.self_capacitance).collect();
        let full = add_self_capacitance(&model.z_bar(750e6, &circ).unwrap(), &caps, 750e6).unwrap();
        let open = linalg::diag(&[C64::new(OPEN_CIRCUIT_OHMS, 0.0)]);
        let reduced = reduce_passive_relays(&full, 2, &open).unwrap();
        let direct = linalg::block(&full, 0, 0, 2, 2);
        assert!(linalg::rel_diff(&reduced, &direct) < 1e-6);
    }

    #[test]
    fn resonance_capacitance_resonates() {
        let l = 7.2e-9;
        let c = resonance_capacitance(l, 750e6);
        let x = omega(750e6) * l - 1.0 / (omega(750e6) * c);
        assert!(x.abs() < 1e-9);
    }
}
