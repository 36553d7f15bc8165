//! Exact-mode invariants on synthetic data and a tiny solver run. Used by
//! `spde selftest`; finishes in a few seconds.

use crate::coefficients::Nonlinearity;
use crate::config::RunConfig;
use crate::degiorgi::level_cascade;
use crate::ensemble::compute_path;
use crate::error::Result;
use crate::grid::Grid;
use crate::noise::NoisePath;
use crate::rng::{StreamKey, StreamRole};
use crate::synthetic::FourierData;
use crate::verify::{self, CheckResult};

const SEED: u64 = 0x5e1f;
const A_GRID: [f64; 3] = [1.0, 2.0, 4.0];
const K_MAX: usize = 6;

fn synthetic_checks(dim: usize, points: usize, dt: f64, amplitude: f64) -> Result<Vec<CheckResult>> {
    let grid = Grid::new(dim, 1.0, points)?;
    let key = StreamKey::new(SEED, dim as u64, StreamRole::InitialData);
    let traj = FourierData::random(grid, 6, 3, amplitude, &key).trajectory::<f64>(0.0, 2.0, dt)?;
    let path = NoisePath::generate(0, 0.0, 2.0, dt, StreamKey::new(SEED, dim as u64, StreamRole::Noise))?;
    let nl = Nonlinearity::zero(grid, 0);
    let mut cheb = Vec::new();
    let mut mvt = Vec::new();
    let mut levels = Vec::new();
    for a in A_GRID {
        cheb.push(verify::check_chebyshev(&traj, a, K_MAX)?);
        mvt.push(verify::check_mean_value(&traj, a, K_MAX)?);
        levels.extend(level_cascade(&traj, &path, &nl, a, K_MAX, 10)?);
    }
    let mut out = vec![
        CheckResult::merge(&format!("chebyshev_n{dim}"), &cheb),
        CheckResult::merge(&format!("mean_value_n{dim}"), &mvt),
        CheckResult::merge(&format!("monotonicity_n{dim}"), &[verify::check_monotonicity(&levels)]),
    ];
    if dim == 3 {
        out.push(verify::check_interpolation(&traj, (1.0, 2.0))?);
    }
    Ok(out)
}

fn solver_config() -> RunConfig {
    RunConfig::from_json(
        r#"{
            "problem": {
                "dim": 1, "length": 0.25, "points": 64, "dt": 0.01, "t_end": 2.0,
                "lambda": 0.5, "epoch_dt": 0.1, "cell": 8,
                "growth_lambda": 1.0, "k_budget": 1.0, "k_radius": 0.25,
                "initial": { "kind": "rough", "norm": 1.0 }
            },
            "ensemble": { "n_paths": 2, "run_seed": 24301 }
        }"#,
    )
    .expect("built-in selftest config is valid")
}

/// Every check must pass.
pub fn selftest() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    out.extend(synthetic_checks(1, 128, 0.01, 1.5)?);
    out.extend(synthetic_checks(2, 32, 0.02, 1.5)?);
    out.extend(synthetic_checks(3, 8, 0.05, 1.5)?);
    let cfg = solver_config();
    let built = cfg.build()?;
    let mut exact: Vec<Vec<CheckResult>> = Vec::new();
    for id in 0..cfg.ensemble.n_paths {
        exact.push(compute_path(&cfg, &built, id, None)?.exact);
    }
    for (j, first) in exact[0].iter().enumerate() {
        let parts: Vec<CheckResult> = exact.iter().map(|e| e[j].clone()).collect();
        out.push(CheckResult::merge(&format!("solver_{}", first.name), &parts));
    }
    Ok(out)
}
