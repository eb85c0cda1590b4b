use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use mimi_core::config::ScenarioConfig;
use mimi_core::experiments::{self, validate};
use mimi_core::scenario::{run_monte_carlo, MonteCarloKind, Scenario};
use mimi_core::Error;

#[derive(Parser)]
#[command(name = "mimi", version, about = "Magneto-inductive link simulator for in-body microsensor swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Downlink channel gain over frequency for the three matching variants.
    Spectrum(Common),
    /// Downlink PTE and uplink rate versus sensor coil size.
    CoilSweep(Common),
    /// Rate CDFs of one sensor among passive relays.
    RelayCdf(Common),
    /// Rate CDFs of cooperating sensors among passive relays.
    CoopCdf(Common),
    /// Fast invariant checks; exits 1 if any fails.
    Validate(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Config override `dotted.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

fn config_failure(message: String) -> Failure {
    Failure { code: 2, message }
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_failure(format!("cannot read {}: {e}", path.display())))?;
            ScenarioConfig::from_json_str(&text, &c.overrides)
                .map_err(|e| config_failure(format!("{}: {e}", path.display())))?
        }
        None => ScenarioConfig::default_with(&c.overrides)?,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

struct Output {
    dir: PathBuf,
    kind: &'static str,
    force: bool,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path, kind: &'static str, force: bool, names: &[&str]) -> Result<Self, Failure> {
        let mut files: Vec<String> = names.iter().map(|n| n.to_string()).collect();
        files.push(format!("{kind}_manifest.json"));
        if !force {
            if let Some(f) = files.iter().find(|f| dir.join(f).exists()) {
                return Err(config_failure(format!(
                    "{} exists; pass --force to overwrite",
                    dir.join(f).display()
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), kind, force, files })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        if !self.force && path.exists() {
            return Err(config_failure(format!("{} exists; pass --force to overwrite", path.display())));
        }
        fs::write(&path, contents).map_err(|e| io_failure(&path, e))
    }

    fn manifest(&self, cfg: &ScenarioConfig, started: Instant, summary: serde_json::Value) -> Result<(), Failure> {
        let config = cfg.to_json();
        let manifest = json!({
            "kind": self.kind,
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": format!("{:x}", Sha256::digest(config.as_bytes())),
            "seed": cfg.seed,
            "threads": rayon::current_num_threads(),
            "wall_time_s": started.elapsed().as_secs_f64(),
            "files": &self.files[..self.files.len() - 1],
            "summary": summary,
            "config": serde_json::from_str::<serde_json::Value>(&config).expect("config is JSON"),
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        self.write(&format!("{}_manifest.json", self.kind), &(text + "\n"))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 3, message: format!("{}: {e}", path.display()) }
}

fn summary_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("summary serializes")
}

fn spectrum(c: &Common, cfg: &ScenarioConfig, started: Instant) -> Result<(), Failure> {
    let out = Output::new(&c.out, "spectrum", c.force, &["spectrum.csv"])?;
    let scn = Scenario::prepare(cfg)?;
    let res = experiments::spectrum(&scn)?;
    out.write("spectrum.csv", &experiments::spectrum_csv(&res))?;
    println!(
        "peak gain {:.3} dB at {:.6} MHz (practical matching at both ends)",
        res.peak_gain_db,
        res.peak_frequency / 1e6
    );
    out.manifest(
        cfg,
        started,
        json!({"peak_frequency_hz": res.peak_frequency, "peak_gain_db": res.peak_gain_db}),
    )
}

fn coil_sweep(c: &Common, cfg: &ScenarioConfig, started: Instant) -> Result<(), Failure> {
    let out = Output::new(&c.out, "coil_sweep", c.force, &["coil_sweep.csv"])?;
    let scn = Scenario::prepare(cfg)?;
    let res = experiments::coil_sweep(&scn)?;
    out.write("coil_sweep.csv", &experiments::coil_sweep_csv(&res))?;
    match res.threshold_size {
        Some(s) => println!("activation threshold: {:.1} um (best orientation)", s * 1e6),
        None => println!("activation threshold: not reached on the size grid"),
    }
    out.manifest(cfg, started, json!({"threshold_size_m": res.threshold_size}))
}

fn monte_carlo(c: &Common, cfg: &ScenarioConfig, started: Instant, kind: MonteCarloKind) -> Result<(), Failure> {
    let (name, mc) = match kind {
        MonteCarloKind::Relay => ("relay_cdf", &cfg.relay_cdf),
        MonteCarloKind::Coop => ("coop_cdf", &cfg.coop_cdf),
    };
    let cdf_file = format!("{name}.csv");
    let real_file = format!("{name}_realizations.csv");
    let out = Output::new(&c.out, name, c.force, &[&cdf_file, &real_file])?;
    let scn = Scenario::prepare(cfg)?;
    let res = run_monte_carlo(&scn, mc, kind)?;
    experiments::ensure_outcomes(&res)?;
    out.write(&cdf_file, &experiments::cdf_csv(&res))?;
    out.write(&real_file, &experiments::realizations_csv(&res))?;
    let s = experiments::summarize(&res);
    println!(
        "{} realizations ({} failed): median rate simple {:.4e}, elaborate {:.4e}, no relays {:.4e} bit/s",
        s.realizations, s.failures, s.median_simple, s.median_elaborate, s.median_no_relay
    );
    println!(
        "relays helped {:.1}%, detrimental {:.1}%; elaborate beats simple {:.1}%",
        100.0 * s.relays_helped_fraction,
        100.0 * s.relays_detrimental_fraction,
        100.0 * s.elaborate_beats_simple_fraction
    );
    out.manifest(cfg, started, summary_value(&s))
}

fn run_validate(c: &Common, cfg: &ScenarioConfig, started: Instant) -> Result<bool, Failure> {
    let out = Output::new(&c.out, "validate", c.force, &["validate.csv"])?;
    let checks = validate::run_checks(cfg);
    let mut table = String::from("check,passed,detail\n");
    for ch in &checks {
        println!("{} {:<24} {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
        table.push_str(&format!("{},{},\"{}\"\n", ch.name, ch.passed, ch.detail.replace('"', "'")));
    }
    out.write("validate.csv", &table)?;
    let all = checks.iter().all(|ch| ch.passed);
    out.manifest(cfg, started, json!({"all_passed": all, "checks": summary_value(&checks)}))?;
    Ok(all)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let started = Instant::now();
    let common = match &cli.command {
        Command::Spectrum(c)
        | Command::CoilSweep(c)
        | Command::RelayCdf(c)
        | Command::CoopCdf(c)
        | Command::Validate(c) => c.clone(),
    };
    let cfg = load_config(&common)?;
    if let Some(n) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure { code: 3, message: format!("thread pool: {e}") })?;
    }
    match cli.command {
        Command::Spectrum(_) => spectrum(&common, &cfg, started)?,
        Command::CoilSweep(_) => coil_sweep(&common, &cfg, started)?,
        Command::RelayCdf(_) => monte_carlo(&common, &cfg, started, MonteCarloKind::Relay)?,
        Command::CoopCdf(_) => monte_carlo(&common, &cfg, started, MonteCarloKind::Coop)?,
        Command::Validate(_) => return run_validate(&common, &cfg, started),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
