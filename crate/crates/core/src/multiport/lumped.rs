//! Lumped-element matching networks: L and T two-ports, ideal multiports, synthesis and
//! off-design evaluation.
//!
//! Two-port convention: port 1 faces the generator or LNA, port 2 faces the coil.
//! Elements are listed from port 1 to port 2.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PartitionedImpedance;
use crate::error::{domain, Error, Result};
use crate::{omega, CMatrix, C64};

/// Reactance used for an absent shunt branch (an "open" that keeps the Z-matrix finite).
pub const OPEN_SHUNT_OHMS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Topology {
    /// Series element at port 1, shunt across port 2.
    LSeriesFirst,
    /// Shunt across port 1, series element towards port 2.
    LShuntFirst,
    T,
    Pi,
    IdealMultiport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Inductor,
    Capacitor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Series,
    Shunt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub kind: ElementKind,
    /// Henries or farads.
    pub value: f64,
    pub placement: Placement,
}

impl Element {
    /// Element realizing reactance `x` (ohm) at `f`.
    pub fn from_reactance(x: f64, f: f64, placement: Placement) -> Self {
        let w = omega(f);
        if x >= 0.0 {
            Element {
                kind: ElementKind::Inductor,
                value: x / w,
                placement,
            }
        } else {
            Element {
                kind: ElementKind::Capacitor,
                value: -1.0 / (w * x),
                placement,
            }
        }
    }

    pub fn impedance(&self, f: f64) -> C64 {
        let w = omega(f);
        match self.kind {
            ElementKind::Inductor => C64::new(0.0, w * self.value),
            ElementKind::Capacitor => C64::new(0.0, -1.0 / (w * self.value)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LumpedNetwork {
    pub topology: Topology,
    pub elements: Vec<Element>,
    pub design_frequency: f64,
    /// Stored `[port-1 group; coil group]` matrix of an ideal multiport at the design frequency.
    pub ideal: Option<PartitionedImpedance>,
}

impl LumpedNetwork {
    /// Two-port network with element values chosen from reactances at `f_design`.
    /// Series reactances of zero are dropped; a zero shunt reactance is not allowed.
    pub fn from_reactances(topology: Topology, reactances: &[f64], f_design: f64) -> Result<Self> {
        let placements: &[Placement] = match topology {
            Topology::LSeriesFirst => &[Placement::Series, Placement::Shunt],
            Topology::LShuntFirst => &[Placement::Shunt, Placement::Series],
            Topology::T => &[Placement::Series, Placement::Shunt, Placement::Series],
            Topology::Pi => &[Placement::Shunt, Placement::Series, Placement::Shunt],
            Topology::IdealMultiport => {
                return domain("ideal multiports are not built from element reactances")
            }
        };
        if reactances.len() != placements.len() {
            return domain(format!(
                "{topology:?} needs {} reactances, got {}",
                placements.len(),
                reactances.len()
            ));
        }
        let mut elements = Vec::new();
        for (&x, &p) in reactances.iter().zip(placements) {
            if !x.is_finite() {
                return domain(format!("non-finite element reactance {x}"));
            }
            match p {
                Placement::Series if x == 0.0 => {}
                Placement::Shunt if x == 0.0 => return domain("shunt short circuit"),
                _ => elements.push(Element::from_reactance(x, f_design, p)),
            }
        }
        Ok(Self {
            topology,
            elements,
            design_frequency: f_design,
            ideal: None,
        })
    }

    pub fn ideal(matrix: PartitionedImpedance, f_design: f64) -> Self {
        Self {
            topology: Topology::IdealMultiport,
            elements: Vec::new(),
            design_frequency: f_design,
            ideal: Some(matrix),
        }
    }

    pub fn inductor_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| e.kind == ElementKind::Inductor)
            .count()
    }

    /// Sum of element values in normalized units (nH + pF), used for tie-breaking.
    pub fn value_sum(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| match e.kind {
                ElementKind::Inductor => e.value * 1e9,
                ElementKind::Capacitor => e.value * 1e12,
            })
            .sum()
    }

    /// Impedance matrix at `f` (2×2 for two-ports, ports ordered `[port 1, port 2]`).
    pub fn evaluate(&self, f: f64) -> Result<CMatrix> {
        Ok(self.evaluate_partitioned(f)?.matrix)
    }

    /// Like [`evaluate`](Self::evaluate), keeping the port-1/coil partition.
    pub fn evaluate_partitioned(&self, f: f64) -> Result<PartitionedImpedance> {
        if !(f > 0.0) {
            return domain(format!("frequency must be positive (got {f})"));
        }
        if let Some(ideal) = &self.ideal {
            // All-inductive realization: reactances scale with frequency.
            return Ok(PartitionedImpedance {
                matrix: ideal.matrix.scale(f / self.design_frequency),
                ..ideal.clone()
            });
        }
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let (mut a, mut b, mut c, mut d) = (one, zero, zero, one);
        let mut has_shunt = false;
        let mut cascade = |el: (Placement, C64)| {
            let (p, z) = el;
            let (na, nb, nc, nd) = match p {
                Placement::Series => (a, a * z + b, c, c * z + d),
                Placement::Shunt => {
                    let y = z.inv();
                    (a + b * y, b, c + d * y, d)
                }
            };
            a = na;
            b = nb;
            c = nc;
            d = nd;
        };
        for el in &self.elements {
            has_shunt |= el.placement == Placement::Shunt;
            cascade((el.placement, el.impedance(f)));
        }
        if !has_shunt {
            cascade((Placement::Shunt, C64::new(0.0, -OPEN_SHUNT_OHMS)));
        }
        let m = CMatrix::from_row_slice(2, 2, &[a / c, c.inv(), c.inv(), d / c]);
        PartitionedImpedance::new(m, 1)
    }

    /// Impedance presented at port 1 with port 2 terminated in `z_load`.
    pub fn presented_impedance(&self, z_load: C64, f: f64) -> Result<C64> {
        let z = self.evaluate(f)?;
        Ok(z[(0, 0)] - z[(0, 1)] * z[(1, 0)] / (z[(1, 1)] + z_load))
    }
}

pub fn evaluate_lumped(net: &LumpedNetwork, f: f64) -> Result<CMatrix> {
    net.evaluate(f)
}

/// Assembles the matching stage for a set of networks at `f`.
///
/// Either one ideal multiport or one two-port per coil (block diagonal). With
/// `coil_side_front` the coil ports come first, as needed for the Rx stage.
pub fn two_port_stage(
    nets: &[LumpedNetwork],
    f: f64,
    coil_side_front: bool,
) -> Result<PartitionedImpedance> {
    let stage = if let [single] = nets {
        if single.ideal.is_some() {
            Some(single.evaluate_partitioned(f)?)
        } else {
            None
        }
    } else {
        None
    };
    let stage = match stage {
        Some(s) => s,
        None => {
            let n = nets.len();
            let mut m = CMatrix::zeros(2 * n, 2 * n);
            for (i, net) in nets.iter().enumerate() {
                if net.ideal.is_some() {
                    return domain("cannot mix ideal multiports with per-coil two-ports");
                }
                let z = net.evaluate(f)?;
                m[(i, i)] = z[(0, 0)];
                m[(i, n + i)] = z[(0, 1)];
                m[(n + i, i)] = z[(1, 0)];
                m[(n + i, n + i)] = z[(1, 1)];
            }
            PartitionedImpedance::new(m, n)?
        }
    };
    Ok(if coil_side_front { stage.flipped() } else { stage })
}

/// Two-element match presenting `conj(z_target)` at port 1 when port 2 sees `z_load`.
///
/// Both L topologies and both sign branches are tried; the choice prefers fewer
/// inductors, then fewer elements, then series-first. A load that already equals the
/// target yields an explicit through-connection (no series element, open shunt).
pub fn synthesize_l_network(z_load: C64, z_target: C64, f_design: f64) -> Result<LumpedNetwork> {
    let zp = z_target.conj();
    if !(z_load.re > 0.0 && zp.re > 0.0) {
        return Err(Error::Synthesis(format!(
            "L-network needs resistive parts on both sides (load {z_load}, target {z_target})"
        )));
    }
    if !(f_design > 0.0) {
        return domain("design frequency must be positive");
    }
    let scale = z_load.norm().max(zp.norm());
    if (z_load - zp).norm() <= 1e-12 * scale {
        return LumpedNetwork::from_reactances(
            Topology::LSeriesFirst,
            &[0.0, -OPEN_SHUNT_OHMS],
            f_design,
        );
    }
    let mut candidates: Vec<LumpedNetwork> = Vec::new();
    let tiny = 1e-12 * scale;

    // Shunt susceptance across the load, series reactance at port 1.
    let yl = z_load.inv();
    let disc = yl.re / zp.re - yl.re * yl.re;
    if disc >= 0.0 {
        for s in [1.0, -1.0] {
            let b = s * disc.sqrt() - yl.im;
            let z_mid = C64::new(yl.re, yl.im + b).inv();
            let x_series = zp.im - z_mid.im;
            let x_shunt = if b.abs() * scale < 1e-12 { -OPEN_SHUNT_OHMS } else { -1.0 / b };
            let xs = if x_series.abs() < tiny { 0.0 } else { x_series };
            if let Ok(n) = LumpedNetwork::from_reactances(Topology::LSeriesFirst, &[xs, x_shunt], f_design) {
                candidates.push(n);
            }
        }
    }
    // Series reactance next to the load, shunt susceptance across port 1.
    let yp = zp.inv();
    let disc = z_load.re / yp.re - z_load.re * z_load.re;
    if disc >= 0.0 {
        for s in [1.0, -1.0] {
            let x_series = s * disc.sqrt() - z_load.im;
            let y_mid = C64::new(z_load.re, z_load.im + x_series).inv();
            let b = yp.im - y_mid.im;
            let x_shunt = if b.abs() * scale < 1e-12 { -OPEN_SHUNT_OHMS } else { -1.0 / b };
            let xs = if x_series.abs() < tiny { 0.0 } else { x_series };
            if let Ok(n) = LumpedNetwork::from_reactances(Topology::LShuntFirst, &[x_shunt, xs], f_design) {
                candidates.push(n);
            }
        }
    }
    let candidates: Vec<_> = candidates
        .into_iter()
        .filter(|n| {
            n.presented_impedance(z_load, f_design)
                .map(|z| (z - zp).norm() <= 1e-6 * zp.norm())
                .unwrap_or(false)
        })
        .collect();
    let key = |n: &LumpedNetwork| {
        let open = n
            .elements
            .iter()
            .filter(|e| e.placement == Placement::Shunt && e.impedance(f_design).im <= -0.5 * OPEN_SHUNT_OHMS)
            .count();
        (
            n.inductor_count(),
            n.elements.len() - open,
            (n.topology != Topology::LSeriesFirst) as usize,
        )
    };
    candidates
        .into_iter()
        .min_by(|a, b| key(a).cmp(&key(b)).then(a.value_sum().total_cmp(&b.value_sum())))
        .ok_or_else(|| {
            Error::Synthesis(format!(
                "no two-element network transforms {z_load} into {zp}"
            ))
        })
}

/// Budget and search settings for the T-network optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TOptOptions {
    pub multistarts: usize,
    pub max_iters: u64,
    /// Standard deviation of the random starts in `asinh(X / 50 ohm)` units.
    pub start_spread: f64,
    /// Independent values per coil instead of one shared design.
    pub per_coil: bool,
    pub seed: u64,
}

impl Default for TOptOptions {
    fn default() -> Self {
        Self {
            multistarts: 8,
            max_iters: 400,
            start_spread: 0.5,
            per_coil: false,
            seed: 0x5eed_7e57,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TOptResult {
    pub networks: Vec<LumpedNetwork>,
    /// Achieved objective (dB).
    pub objective: f64,
    pub initial_objective: f64,
    pub improved: bool,
}

const REACTANCE_SCALE: f64 = 50.0;

fn t_networks(params: &[f64], n_coils: usize, per_coil: bool, f: f64) -> Result<Vec<LumpedNetwork>> {
    (0..n_coils)
        .map(|i| {
            let p = if per_coil { &params[3 * i..3 * i + 3] } else { &params[0..3] };
            let x: Vec<f64> = p.iter().map(|v| REACTANCE_SCALE * v.sinh()).collect();
            LumpedNetwork::from_reactances(Topology::T, &x, f)
        })
        .collect()
}

struct NegObjective<'a, F> {
    objective: &'a F,
    n_coils: usize,
    per_coil: bool,
    f: f64,
}

impl<F> CostFunction for NegObjective<'_, F>
where
    F: Fn(&[LumpedNetwork]) -> Result<f64>,
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let value = t_networks(p, self.n_coils, self.per_coil, self.f)
            .and_then(|nets| (self.objective)(&nets))
            .unwrap_or(f64::NEG_INFINITY);
        Ok(if value.is_finite() { -value } else { 1e6 })
    }
}

fn nelder_mead<F>(cost: NegObjective<'_, F>, start: Vec<f64>, step: f64, iters: u64) -> (Vec<f64>, f64)
where
    F: Fn(&[LumpedNetwork]) -> Result<f64>,
{
    let mut simplex = vec![start.clone()];
    for i in 0..start.len() {
        let mut v = start.clone();
        v[i] += step;
        simplex.push(v);
    }
    let fallback = start.clone();
    let run = NelderMead::new(simplex)
        .with_sd_tolerance(1e-13)
        .map_err(|e| e.to_string())
        .and_then(|solver| {
            Executor::new(cost, solver)
                .configure(|s| s.max_iters(iters))
                .run()
                .map_err(|e| e.to_string())
        });
    match run {
        Ok(res) => {
            let state = res.state();
            match &state.best_param {
                Some(p) => (p.clone(), state.best_cost),
                None => (fallback, f64::INFINITY),
            }
        }
        Err(e) => {
            log::warn!("simplex search failed: {e}");
            (fallback, f64::INFINITY)
        }
    }
}

/// Optimizes per-coil T networks for the largest `objective` (dB, higher is better).
///
/// `init` holds the starting T reactances `[X1, X2, X3]` (ohm at `f_design`), usually
/// derived from an L match. The search runs a simplex in `asinh(X / 50)` coordinates
/// from `init` and from `multistarts - 1` perturbed copies, then polishes the best.
pub fn synthesize_t_network_snr_opt<F>(
    n_coils: usize,
    init: [f64; 3],
    f_design: f64,
    objective: F,
    opts: &TOptOptions,
) -> Result<TOptResult>
where
    F: Fn(&[LumpedNetwork]) -> Result<f64> + Sync,
{
    if n_coils == 0 {
        return domain("T-network optimization needs at least one coil");
    }
    if init[1] == 0.0 {
        return domain("T-network start needs a non-zero shunt reactance");
    }
    let base: Vec<f64> = init.iter().map(|x| (x / REACTANCE_SCALE).asinh()).collect();
    let dim = if opts.per_coil { 3 * n_coils } else { 3 };
    let start: Vec<f64> = (0..dim).map(|i| base[i % 3]).collect();
    let initial_objective = objective(&t_networks(&start, n_coils, opts.per_coil, f_design)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![start.clone()];
    for _ in 1..opts.multistarts.max(1) {
        starts.push(
            start
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + opts.start_spread * z
                })
                .collect(),
        );
    }
    let mk = || NegObjective {
        objective: &objective,
        n_coils,
        per_coil: opts.per_coil,
        f: f_design,
    };
    let runs: Vec<(Vec<f64>, f64)> = starts
        .into_par_iter()
        .map(|s| nelder_mead(mk(), s, 0.3, opts.max_iters))
        .collect();
    let value_sum = |p: &[f64]| -> f64 {
        t_networks(p, n_coils, opts.per_coil, f_design)
            .map(|n| n.iter().map(|x| x.value_sum()).sum())
            .unwrap_or(f64::INFINITY)
    };
    let (best, _) = runs
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(value_sum(&a.0).total_cmp(&value_sum(&b.0))))
        .expect("at least one start");
    // Restart from the best vertex with a small simplex to settle the optimum.
    let (mut best, mut cost) = nelder_mead(mk(), best, 0.05, opts.max_iters);
    for _ in 0..3 {
        let (p, c) = nelder_mead(mk(), best.clone(), 0.01, opts.max_iters);
        let gained = cost - c;
        if c < cost {
            best = p;
            cost = c;
        }
        if !(gained > 1e-9) {
            break;
        }
    }
    let objective_value = -cost;
    let improved = objective_value > initial_objective;
    if !improved {
        log::warn!(
            "T-network optimization did not improve on its start ({initial_objective:.4} dB)"
        );
    }
    Ok(TOptResult {
        networks: t_networks(&best, n_coils, opts.per_coil, f_design)?,
        objective: objective_value.max(initial_objective),
        initial_objective,
        improved,
    })
}

/// T reactances `[X1, X2, X3]` equivalent to an L network at its design frequency.
pub fn t_start_from_l(net: &LumpedNetwork) -> [f64; 3] {
    let f = net.design_frequency;
    let mut series = Vec::new();
    let mut shunt = -OPEN_SHUNT_OHMS;
    for e in &net.elements {
        match e.placement {
            Placement::Series => series.push(e.impedance(f).im),
            Placement::Shunt => shunt = e.impedance(f).im,
        }
    }
    let s = series.first().copied().unwrap_or(0.0);
    match net.topology {
        Topology::LShuntFirst => [0.0, shunt, s],
        _ => [s, shunt, 0.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const F: f64 = 750e6;

    #[test]
    fn l_network_hits_target_and_detunes() {
        let z_load = C64::new(5.0, 30.0);
        let net = synthesize_l_network(z_load, C64::new(50.0, 0.0), F).unwrap();
        assert_eq!(net.elements.len(), 2);
        let z = net.presented_impedance(z_load, F).unwrap();
        assert!((z - 50.0).norm() < 1e-6 * 50.0, "{z}");
        let off = net.presented_impedance(z_load, 1.1 * F).unwrap();
        assert!((off - 50.0).norm() > 1.0);
        assert!(net.elements.iter().all(|e| e.value > 0.0));
    }

    #[test]
    fn l_network_prefers_fewer_inductors() {
        // Inductive coil to 50 ohm: a capacitive solution exists for both elements.
        let net = synthesize_l_network(C64::new(0.6, 34.0), C64::new(50.0, 0.0), F).unwrap();
        assert_eq!(net.inductor_count(), 0);
        let z = net.presented_impedance(C64::new(0.6, 34.0), F).unwrap();
        assert!((z - 50.0).norm() < 1e-6 * 50.0);
    }

    #[test]
    fn matched_load_gives_through_connection() {
        let z = C64::new(50.0, 0.0);
        let net = synthesize_l_network(z, z, F).unwrap();
        assert!(net.elements.iter().all(|e| e.placement == Placement::Shunt));
        let p = net.presented_impedance(z, F).unwrap();
        assert!((p - z).norm() < 1e-6 * 50.0);
    }

    #[test]
    fn infeasible_transformation_is_reported() {
        assert!(synthesize_l_network(C64::new(-1.0, 0.0), C64::new(50.0, 0.0), F).is_err());
    }

    #[test]
    fn complex_target_is_conjugated() {
        let z_opt = C64::new(47.7, 15.0);
        let load = C64::new(0.8, 60.0);
        let net = synthesize_l_network(load, z_opt.conj(), F).unwrap();
        let p = net.presented_impedance(load, F).unwrap();
        assert!((p - z_opt).norm() < 1e-6 * z_opt.norm());
    }

    #[test]
    fn lumped_networks_are_reciprocal_and_lossless() {
        let t = LumpedNetwork::from_reactances(Topology::T, &[12.0, -40.0, 75.0], F).unwrap();
        for f in [100e6, 750e6, 2e9] {
            let z = t.evaluate(f).unwrap();
            assert!((z[(0, 1)] - z[(1, 0)]).norm() < 1e-9 * z.norm());
            assert!(z.iter().all(|v| v.re.abs() < 1e-9 * z.norm()));
        }
        let z = t.evaluate(F).unwrap();
        // Closed form of the T at design: Z11 = X1 + X2, Z22 = X3 + X2, Z12 = X2.
        assert!((z[(0, 0)].im - (-28.0)).abs() < 1e-9);
        assert!((z[(1, 1)].im - 35.0).abs() < 1e-9);
        assert!((z[(0, 1)].im + 40.0).abs() < 1e-9);
        assert!((t.evaluate(2.0 * F).unwrap() - &z).norm() > 1.0);
    }

    #[test]
    fn single_series_inductor_uses_open_shunt() {
        let net = LumpedNetwork {
            topology: Topology::LSeriesFirst,
            elements: vec![Element { kind: ElementKind::Inductor, value: 5e-9, placement: Placement::Series }],
            design_frequency: F,
            ideal: None,
        };
        let z = net.evaluate(F).unwrap();
        let xl = omega(F) * 5e-9;
        assert!((z[(0, 0)].im - (xl - OPEN_SHUNT_OHMS)).abs() < 1e-3);
        assert!((z[(0, 1)].im + OPEN_SHUNT_OHMS).abs() < 1e-3);
        // Presented impedance is the series element plus the load, up to the open shunt.
        let p = net.presented_impedance(C64::new(50.0, 0.0), F).unwrap();
        assert!((p - C64::new(50.0, xl)).norm() < 1e-5);
    }

    #[test]
    fn t_optimizer_finds_interior_optimum_of_smooth_objective() {
        // Peak when the T presents 40 + 10j ohm to a 2 + 30j load.
        let load = C64::new(2.0, 30.0);
        let want = C64::new(40.0, 10.0);
        let objective = |nets: &[LumpedNetwork]| -> Result<f64> {
            let z = nets[0].presented_impedance(load, F)?;
            let gamma = ((z - want) / (z + want.conj())).norm_sqr();
            Ok(10.0 * (1.0 - gamma).max(1e-30).log10())
        };
        let l = synthesize_l_network(load, C64::new(50.0, 0.0), F).unwrap();
        let res = synthesize_t_network_snr_opt(1, t_start_from_l(&l), F, objective, &TOptOptions::default())
            .unwrap();
        assert!(res.objective > -1e-6, "{}", res.objective);
        assert!(res.objective >= res.initial_objective);
    }
}
