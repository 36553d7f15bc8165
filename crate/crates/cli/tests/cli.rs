use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
    "problem": {
        "dim": 1, "length": 1.0, "points": 32, "dt": 0.02, "t_end": 2.0,
        "lambda": 0.5, "epoch_dt": 0.1, "cell": 4,
        "growth_lambda": 3.0, "k_budget": 1.0, "k_radius": 0.25,
        "initial": { "kind": "rough", "norm": 1.0 },
        "nonlinearity": { "drift_lambda": 1.0, "noise_lambda": 2.0 }
    },
    "ensemble": { "n_paths": 3, "run_seed": 5 },
    "reflection": { "horizon": 1.0, "b": 1.0, "a_grid": [1.0, 2.0], "paths": 2000, "dt": 0.001, "seed": 3 }
}"#;

fn spde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spde")).args(args).env_remove("SPDE_THREADS").output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn selftest_passes() {
    let out = spde(&["selftest"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    assert!(stdout.contains("interpolation"));
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    fs::write(&file, CONFIG.replace("\"dt\": 0.02", "\"dt\": -1.0")).unwrap();
    let out = spde(&["simulate", "--config", arg(&file), "--out", arg(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));

    let missing = spde(&["simulate", "--config", arg(&dir.path().join("absent.json")), "--out", arg(dir.path())]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn verify_without_results_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spde(&["verify", "--in", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_suite_is_rejected() {
    let out = spde(&["verify", "--in", ".", "--suite", "nonsense"]);
    assert!(!out.status.success());
}

#[test]
fn simulate_verify_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let run = dir.path().join("run");
    fs::write(&config, CONFIG).unwrap();

    let sim = spde(&["simulate", "--config", arg(&config), "--out", arg(&run)]);
    assert_eq!(sim.status.code(), Some(0), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(String::from_utf8_lossy(&sim.stdout).starts_with("3 paths (0 resumed, 0 failed) on 1 threads"));

    let again = spde(&["simulate", "--config", arg(&config), "--out", arg(&run)]);
    assert!(String::from_utf8_lossy(&again.stdout).starts_with("3 paths (3 resumed"));

    let report = dir.path().join("checks.json");
    let ver = spde(&["verify", "--in", arg(&run), "--suite", "degiorgi", "--report", arg(&report)]);
    let stdout = String::from_utf8_lossy(&ver.stdout);
    assert!(matches!(ver.status.code(), Some(0 | 1)), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("PASS chebyshev")), "{stdout}");
    let checks: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(checks.as_array().unwrap().len(), stdout.lines().count());

    let rep = spde(&["report", "--in", arg(&run), "--format", "csv"]);
    assert_eq!(rep.status.code(), Some(0), "{}", String::from_utf8_lossy(&rep.stderr));
    for name in ["summary.json", "levels.csv", "tails.csv", "holder.csv", "convergence.csv"] {
        assert!(run.join(name).exists(), "{name}");
    }
}

#[test]
fn thread_override_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spde"))
        .args(["simulate", "--config", arg(&config), "--out", arg(&dir.path().join("run"))])
        .env("SPDE_THREADS", "2")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("on 2 threads"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["thread_count"], 2);
}
