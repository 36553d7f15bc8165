use std::fs;
use std::path::Path;

use spde_core::config::{InitialData, RunConfig};
use spde_core::ensemble::{load_records, load_run, run_ensemble, run_single, REFINED_DIR};
use spde_core::report::{evaluate, level_rows, tail_rows, write_report, Format, Suite};
use spde_core::SpdeError;

fn tiny(paths: u64) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
            "problem": {{
                "dim": 1, "length": 1.0, "points": 32, "dt": 0.02, "t_end": 2.0,
                "lambda": 0.5, "epoch_dt": 0.1, "cell": 4,
                "growth_lambda": 3.0, "k_budget": 1.0, "k_radius": 0.25,
                "initial": {{ "kind": "rough", "norm": 1.0 }},
                "nonlinearity": {{ "drift_lambda": 1.0, "noise_lambda": 2.0 }}
            }},
            "ensemble": {{ "n_paths": {paths}, "run_seed": 11 }},
            "diagnostics": {{ "levelset_stride": 10 }},
            "reflection": {{ "horizon": 1.0, "b": 1.0, "a_grid": [1.0, 2.0], "paths": 2000, "dt": 0.001, "seed": 3 }}
        }}"#
    ))
    .unwrap()
}

fn path_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir.join("paths"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny(4);
    let mut wide = cfg.clone();
    wide.ensemble.thread_count = 4;
    let ra = run_ensemble(&cfg, a.path()).unwrap();
    run_ensemble(&wide, b.path()).unwrap();
    assert_eq!(ra.manifest.completed, 4);
    assert_eq!(ra.manifest.failures, 0);
    assert_eq!(path_files(a.path()), path_files(b.path()));
    let files = path_files(a.path());
    assert_eq!(files.len(), 4);
    assert_eq!(files[2].0, "path_000002.json");
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(1);
    run_ensemble(&cfg, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("config.json")).unwrap();
    assert_eq!(text, cfg.to_json());
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
}

#[test]
fn interrupted_runs_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(3);
    run_single(&cfg, dir.path()).unwrap();
    let before = path_files(dir.path());
    fs::remove_file(dir.path().join("paths/path_000001.json")).unwrap();
    // A truncated record counts as missing.
    fs::write(dir.path().join("paths/path_000002.json"), b"{\"path_id\":").unwrap();
    let again = run_single(&cfg, dir.path()).unwrap();
    assert_eq!(again.manifest.resumed, 1);
    assert_eq!(again.manifest.completed, 3);
    assert_eq!(path_files(dir.path()), before);
}

#[test]
fn different_config_in_same_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    run_single(&tiny(1), dir.path()).unwrap();
    let mut other = tiny(1);
    other.ensemble.run_seed += 1;
    assert!(matches!(run_single(&other, dir.path()), Err(SpdeError::Config(_))));
}

#[test]
fn empty_directories_have_no_results() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_records(dir.path()), Err(SpdeError::NoResults(_))));
    assert!(matches!(evaluate(dir.path(), Suite::All), Err(SpdeError::NoResults(_))));
}

#[test]
fn report_tables_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(2);
    cfg.studies.refine = true;
    run_ensemble(&cfg, dir.path()).unwrap();
    assert!(dir.path().join(REFINED_DIR).join("manifest.json").exists());
    let run = load_run(dir.path()).unwrap();
    let d = &cfg.diagnostics;
    assert_eq!(tail_rows(&run).len(), d.a_grid.len() * d.m_grid.len());
    let levels = level_rows(&run);
    assert!(levels.iter().all(|r| r.k <= d.k_max && r.path_id < 2));

    let files = write_report(dir.path(), Format::Csv).unwrap();
    let names: Vec<_> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["summary.json", "levels.csv", "tails.csv", "holder.csv", "convergence.csv"]);
    let tails = fs::read_to_string(dir.path().join("tails.csv")).unwrap();
    assert_eq!(tails.lines().count(), 1 + d.a_grid.len() * d.m_grid.len());
    let holder = fs::read_to_string(dir.path().join("holder.csv")).unwrap();
    assert!(holder.starts_with("path_id,alpha_hat"));
    assert_eq!(holder.lines().count(), 3);

    let checks = evaluate(dir.path(), Suite::Degiorgi).unwrap();
    let names: Vec<_> = checks.iter().map(|c| c.name.as_str()).collect();
    assert!(names.contains(&"path_failures"));
    assert!(names.contains(&"chebyshev"), "{names:?}");
    for c in checks.iter().filter(|c| c.mode == spde_core::verify::CheckMode::Exact) {
        assert!(c.pass, "{c:?}");
    }

    let json = write_report(dir.path(), Format::Json).unwrap();
    let body: serde_json::Value = serde_json::from_slice(&fs::read(&json[1]).unwrap()).unwrap();
    assert!(body["checks"].as_array().is_some_and(|c| !c.is_empty()));
}

#[test]
fn zero_problem_has_trivial_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(2);
    cfg.problem.initial = InitialData::Zero;
    cfg.problem.k_budget = 0.0;
    let run = run_ensemble(&cfg, dir.path()).unwrap();
    for d in run.data() {
        assert_eq!(d.sup_abs, 0.0);
        assert_eq!(d.norm_plus, 0.0);
        assert_eq!(d.iteration_constant, 0.0);
        assert_eq!(d.qv_constant, 0.0);
        assert!(d.levels.iter().all(|l| l.energy == 0.0 && l.qv == 0.0));
    }
}
