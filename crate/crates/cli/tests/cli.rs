use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mimi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimi")).args(args).output().expect("runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn validate_passes_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let args = ["validate", "--out", &out, "--set", "validate.random_cases=6"];
    let o = mimi(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("validate.csv")).unwrap();
    assert!(table.starts_with("check,passed,detail\n"));
    assert!(!table.contains(",false,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("validate_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "validate");
    assert_eq!(manifest["config"]["validate"]["random_cases"], 6);
    assert_eq!(manifest["summary"]["all_passed"], true);

    let again = mimi(&args);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&mimi(&forced)), 0);
}

#[test]
fn impossible_tolerance_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = mimi(&["validate", "--out", &out, "--set", "validate.tolerance=1e-25", "--set", "validate.random_cases=4"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn bad_configs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = mimi(&["spectrum", "--out", &out, "--set", "array.wire_diameter_m=-0.001"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = mimi(&["spectrum", "--out", &out, "--set", "no_such.key=1"]);
    assert_eq!(code(&o), 2);

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"seed\": 3,\n  \"bogus\": true\n}\n").unwrap();
    let o = mimi(&["spectrum", "--out", &out, "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus") && err.contains("line"), "{err}");
    assert!(!dir.path().join("spectrum.csv").exists());
}

#[test]
fn spectrum_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = mimi(&["spectrum", "--out", &out, "--set", "spectrum.n_bins=21"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 22);
    assert_eq!(lines[0], "f_hz,gain_db_perfect_match,gain_db_practical_sensor,gain_db_practical_both");
    for row in &lines[1..] {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 4);
        // Ideal matching at both ends bounds the practical variants.
        assert!(v[1] >= v[2] - 1e-9 && v[1].is_finite());
    }
}

#[test]
fn relay_study_is_reproducible_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, jobs: &str| {
        let out = out_arg(dir);
        let o = mimi(&["relay-cdf", "--out", &out, "--jobs", jobs, "--seed", "17", "--set", "relay_cdf.n_realizations=3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(a.path(), "1");
    run(b.path(), "2");
    for name in ["relay_cdf.csv", "relay_cdf_realizations.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let rows = fs::read_to_string(a.path().join("relay_cdf_realizations.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("relay_cdf_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 17);
    assert_eq!(manifest["threads"], 1);
    assert_eq!(manifest["summary"]["realizations"], 3);
}
