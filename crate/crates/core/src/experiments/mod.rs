//! The canonical experiments and their CSV tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{LinkSystem, Matching};
use crate::coupling::CouplingModel;
use crate::error::{numerical, Result};
use crate::link::{waterfill, whitened_mrc_gain, PowerBudget};
use crate::scenario::{log_space, orientation_set, MonteCarloResult, Placement, RealizationOutcome, Scenario};
use crate::Vec3;

pub mod validate;

/// Locale-independent number with 9 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.8e}")
}

fn db(v: f64) -> f64 {
    10.0 * v.log10()
}

// ---------------------------------------------------------------------------
// Downlink spectrum

pub const SPECTRUM_HEADER: &str = "f_hz,gain_db_perfect_match,gain_db_practical_sensor,gain_db_practical_both";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub f_hz: f64,
    pub gain_db_perfect_match: f64,
    pub gain_db_practical_sensor: f64,
    pub gain_db_practical_both: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub rows: Vec<SpectrumRow>,
    /// Peak of the practical-at-both-ends curve.
    pub peak_frequency: f64,
    pub peak_gain_db: f64,
    pub grid_step: f64,
}

/// Channel gain `||h||^2` between the array and the reference sensor: ideal joint
/// matching, the sensor's L network in the downlink, and the uplink from that L network
/// into the array T networks.
pub fn spectrum(scn: &Scenario) -> Result<SpectrumResult> {
    let cfg = &scn.config;
    let sp = &cfg.spectrum;
    let n = sp.n_bins;
    let freqs: Vec<f64> = if n == 1 {
        vec![0.5 * (sp.f_lo_hz + sp.f_hi_hz)]
    } else {
        (0..n)
            .map(|k| sp.f_lo_hz + (sp.f_hi_hz - sp.f_lo_hz) * k as f64 / (n - 1) as f64)
            .collect()
    };
    let step = if n > 1 { freqs[1] - freqs[0] } else { sp.f_hi_hz - sp.f_lo_hz };
    let mut coils = scn.external.clone();
    coils.push(scn.sensor_template.clone());
    let model = CouplingModel::new(&coils, (sp.f_lo_hz, sp.f_hi_hz), cfg.dipole_beyond_diameters)?;
    let n_ext = scn.n_external();
    let system = |tx: Vec<usize>, rx: Vec<usize>, tx_m: Matching, rx_m: Matching| {
        LinkSystem::new(model.clone(), tx, rx, tx_m, rx_m, cfg.reference_resistance_ohm, cfg.noise.clone())
    };
    let array: Vec<usize> = (0..n_ext).collect();
    let sensor = Matching::Networks(vec![scn.sensor_match.clone()]);
    // With power measured as delivered power, a lossless transmit network does not
    // change the MRT gain; only the receiving end's matching shows. The "both ends"
    // curve is therefore the reciprocal uplink into the array T networks.
    let systems = [
        system(array.clone(), vec![n_ext], Matching::PowerMatch, Matching::PowerMatch),
        system(array.clone(), vec![n_ext], Matching::PowerMatch, sensor.clone()),
        system(vec![n_ext], array, sensor, Matching::Networks(scn.array_match.clone())),
    ];
    let rows: Vec<SpectrumRow> = freqs
        .par_iter()
        .map(|&f| {
            let state = crate::coupling::AntennaState::new(&model, f)?;
            let g = systems
                .iter()
                .map(|s| Ok(db(s.evaluate_at(&state, step, false)?.channel.h_matrix.norm_squared())))
                .collect::<Result<Vec<f64>>>()?;
            Ok(SpectrumRow {
                f_hz: f,
                gain_db_perfect_match: g[0],
                gain_db_practical_sensor: g[1],
                gain_db_practical_both: g[2],
            })
        })
        .collect::<Result<_>>()?;
    let peak = rows
        .iter()
        .max_by(|a, b| a.gain_db_practical_both.total_cmp(&b.gain_db_practical_both))
        .expect("non-empty spectrum");
    Ok(SpectrumResult {
        peak_frequency: peak.f_hz,
        peak_gain_db: peak.gain_db_practical_both,
        grid_step: step,
        rows,
    })
}

pub fn spectrum_csv(res: &SpectrumResult) -> String {
    let mut out = String::from(SPECTRUM_HEADER);
    out.push('\n');
    for r in &res.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_num(r.f_hz),
            fmt_num(r.gain_db_perfect_match),
            fmt_num(r.gain_db_practical_sensor),
            fmt_num(r.gain_db_practical_both)
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Coil-size sweep

pub const COIL_SWEEP_HEADER: &str = "coil_size_um,pte_db_min,pte_db_max,rate_bps_min,rate_bps_max";

/// Downlink PTE and waterfilled uplink rate over the orientation set at one size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizePoint {
    pub size_m: f64,
    pub pte_db_min: f64,
    pub pte_db_max: f64,
    pub rate_min: f64,
    pub rate_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoilSweepResult {
    pub points: Vec<SizePoint>,
    /// Smallest size at which the best orientation receives the activation power.
    pub threshold_size: Option<f64>,
}

/// Single sensor at the anchor, no relays: PTE at the design frequency with an ideal
/// array power match, and the waterfilled uplink rate through the array T networks.
pub fn evaluate_orientation(scn: &Scenario, size: f64, axis: Vec3) -> Result<(f64, f64)> {
    let cfg = &scn.config;
    let f = cfg.design_frequency_hz;
    let sensor = scn.sensor_at(scn.anchor, axis, size);
    let net = scn.nominal_match(&sensor)?;
    let model = scn.model_for(&Placement {
        sensors: vec![sensor],
        relays: Vec::new(),
    })?;
    let grid = &scn.rate_grid;
    let down = scn.downlink_system(&model, 1, vec![net.clone()]);
    let pte = down.evaluate(f, grid.bin_width, false)?.channel.h_matrix.norm_squared();
    let budget = PowerBudget::from_received(cfg.tx_power_w * pte, cfg.activation_power_w);
    if budget.in_outage {
        return Ok((pte, 0.0));
    }
    let up = scn.uplink_system(&model, 1, vec![net]);
    let gains: Vec<f64> = grid
        .centers
        .iter()
        .map(|&fk| {
            let bin = up.evaluate(fk, grid.bin_width, true)?;
            whitened_mrc_gain(&bin.channel.h_matrix.column(0).into_owned(), &bin.channel.noise_cov)
        })
        .collect::<Result<_>>()?;
    Ok((pte, waterfill(&gains, budget.uplink_power, grid.bin_width)?.total_rate))
}

pub fn evaluate_size(scn: &Scenario, size: f64) -> Result<SizePoint> {
    let results: Vec<(f64, f64)> = orientation_set(scn.config.coil_sweep.n_orientations)
        .par_iter()
        .map(|&axis| evaluate_orientation(scn, size, axis))
        .collect::<Result<_>>()?;
    let fold = |sel: fn(&(f64, f64)) -> f64, max: bool| {
        results
            .iter()
            .map(sel)
            .fold(if max { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| if max { a.max(b) } else { a.min(b) })
    };
    Ok(SizePoint {
        size_m: size,
        pte_db_min: db(fold(|r| r.0, false)),
        pte_db_max: db(fold(|r| r.0, true)),
        rate_min: fold(|r| r.1, false),
        rate_max: fold(|r| r.1, true),
    })
}

/// Size where `p_t * max PTE` crosses `p_0`, interpolated in log size and dB.
pub fn threshold_size(points: &[SizePoint], p_t: f64, p_0: f64) -> Option<f64> {
    let need = db(p_0 / p_t);
    if points.first().is_some_and(|p| p.pte_db_max >= need) {
        return Some(points[0].size_m);
    }
    points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.pte_db_max < need && b.pte_db_max >= need).then(|| {
            let t = (need - a.pte_db_max) / (b.pte_db_max - a.pte_db_max);
            (a.size_m.ln() + t * (b.size_m.ln() - a.size_m.ln())).exp()
        })
    })
}

pub fn coil_sweep(scn: &Scenario) -> Result<CoilSweepResult> {
    let cs = &scn.config.coil_sweep;
    let points: Vec<SizePoint> = log_space(cs.size_min_m, cs.size_max_m, cs.n_sizes)
        .into_iter()
        .map(|s| evaluate_size(scn, s))
        .collect::<Result<_>>()?;
    let threshold = threshold_size(&points, scn.config.tx_power_w, scn.config.activation_power_w);
    Ok(CoilSweepResult {
        points,
        threshold_size: threshold,
    })
}

pub fn coil_sweep_csv(res: &CoilSweepResult) -> String {
    let mut out = String::from(COIL_SWEEP_HEADER);
    out.push('\n');
    for p in &res.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(p.size_m * 1e6),
            fmt_num(p.pte_db_min),
            fmt_num(p.pte_db_max),
            fmt_num(p.rate_min),
            fmt_num(p.rate_max)
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Monte Carlo CDFs

pub const CDF_HEADER: &str = "rate_bps,ecdf_simple,ecdf_elaborate";
pub const REALIZATIONS_HEADER: &str = "realization,rate_bps_simple,rate_bps_elaborate,rate_bps_no_relay,\
received_w_simple,received_w_elaborate,received_w_no_relay,downlink_hz_elaborate";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfSummary {
    pub realizations: usize,
    pub failures: usize,
    pub median_simple: f64,
    pub median_elaborate: f64,
    pub median_no_relay: f64,
    /// Elaborate scheme with relays strictly above / below the relay-free reference.
    pub relays_helped_fraction: f64,
    pub relays_detrimental_fraction: f64,
    pub elaborate_beats_simple_fraction: f64,
    pub outage_simple_fraction: f64,
    pub outage_elaborate_fraction: f64,
    /// Largest relative duality gap of any cooperative log-det solve.
    pub max_solver_gap: f64,
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fraction(outcomes: &[RealizationOutcome], pred: impl Fn(&RealizationOutcome) -> bool) -> f64 {
    if outcomes.is_empty() {
        return f64::NAN;
    }
    outcomes.iter().filter(|o| pred(o)).count() as f64 / outcomes.len() as f64
}

pub fn summarize(res: &MonteCarloResult) -> CdfSummary {
    let o = &res.outcomes;
    let rates = |sel: fn(&RealizationOutcome) -> f64| o.iter().map(sel).collect::<Vec<_>>();
    CdfSummary {
        realizations: o.len(),
        failures: res.failures.len(),
        median_simple: median(&rates(|r| r.simple.rate)),
        median_elaborate: median(&rates(|r| r.elaborate.rate)),
        median_no_relay: median(&rates(|r| r.reference.rate)),
        relays_helped_fraction: fraction(o, |r| r.elaborate.rate > r.reference.rate),
        relays_detrimental_fraction: fraction(o, |r| r.elaborate.rate < r.reference.rate),
        elaborate_beats_simple_fraction: fraction(o, |r| r.elaborate.rate > r.simple.rate),
        outage_simple_fraction: fraction(o, |r| r.simple.outage),
        outage_elaborate_fraction: fraction(o, |r| r.elaborate.outage),
        max_solver_gap: o.iter().map(|r| r.simple.solver_gap.max(r.elaborate.solver_gap).max(r.reference.solver_gap)).fold(0.0, f64::max),
    }
}

/// Empirical CDFs of both schemes evaluated at every observed rate.
pub fn cdf_rows(outcomes: &[RealizationOutcome]) -> Vec<(f64, f64, f64)> {
    let mut s: Vec<f64> = outcomes.iter().map(|o| o.simple.rate).collect();
    let mut e: Vec<f64> = outcomes.iter().map(|o| o.elaborate.rate).collect();
    s.sort_by(f64::total_cmp);
    e.sort_by(f64::total_cmp);
    let mut points: Vec<f64> = s.iter().chain(e.iter()).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let n = outcomes.len() as f64;
    let ecdf = |v: &[f64], x: f64| v.partition_point(|&r| r <= x) as f64 / n;
    points.into_iter().map(|x| (x, ecdf(&s, x), ecdf(&e, x))).collect()
}

pub fn cdf_csv(res: &MonteCarloResult) -> String {
    let mut out = String::from(CDF_HEADER);
    out.push('\n');
    for (x, s, e) in cdf_rows(&res.outcomes) {
        let _ = writeln!(out, "{},{},{}", fmt_num(x), fmt_num(s), fmt_num(e));
    }
    out
}

pub fn realizations_csv(res: &MonteCarloResult) -> String {
    let mut out = String::from(REALIZATIONS_HEADER);
    out.push('\n');
    for o in &res.outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            o.index,
            fmt_num(o.simple.rate),
            fmt_num(o.elaborate.rate),
            fmt_num(o.reference.rate),
            fmt_num(o.simple.received_power),
            fmt_num(o.elaborate.received_power),
            fmt_num(o.reference.received_power),
            fmt_num(o.elaborate.downlink_frequency)
        );
    }
    out
}

/// Refuses empty experiment results that would produce header-only tables.
pub fn ensure_outcomes(res: &MonteCarloResult) -> Result<()> {
    if res.outcomes.is_empty() {
        return numerical("every realization failed");
    }
    Ok(())
}
