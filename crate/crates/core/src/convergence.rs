//! Solver order studies: the heat equation against its exact solution, and
//! self-convergence under additive noise on a shared Brownian path.

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSchedule, EllipticitySpec, GrowthData, Nonlinearity};
use crate::error::Result;
use crate::grid::{Field, Grid};
use crate::noise::NoisePath;
use crate::rng::{StreamKey, StreamRole};
use crate::solver::{solve_with, ProblemSpec, Scheme};
use crate::stats::log_log_fit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub study: String,
    /// `(dt or dx, error)`.
    pub points: Vec<(f64, f64)>,
    /// Log-log slope of error against the refined parameter.
    pub order: f64,
}

fn heat_problem(grid: Grid, u0: Field<f64>, nl: Nonlinearity<f64>, t_end: f64, dt: f64) -> Result<ProblemSpec<f64>> {
    Ok(ProblemSpec {
        grid,
        ellipticity: EllipticitySpec { lambda: 1.0, epoch_dt: t_end, cell: 1 },
        growth: GrowthData::new(Field::zeros(grid), 1.0)?,
        nonlinearity: nl,
        u0,
        t_end,
        dt,
        scheme: Scheme::SemiImplicit,
    })
}

/// Relative `L²` error at `t_end` of the heat flow of `sin(2πx/L)` against `e^{−(2π/L)²t} sin(2πx/L)`.
pub fn heat_error(points: usize, dt: f64, t_end: f64) -> Result<f64> {
    let grid = Grid::new(1, 1.0, points)?;
    let k = std::f64::consts::TAU;
    let u0 = Field::from_fn(grid, |x| (k * x[0]).sin());
    let ps = heat_problem(grid, u0.clone(), Nonlinearity::zero(grid, 0), t_end, dt)?;
    let path = NoisePath::generate(0, 0.0, t_end, dt, StreamKey::new(0, 0, StreamRole::Noise))?;
    let traj = solve_with(&ps, &CoefficientSchedule::identity(grid), &path)?.trajectory;
    let exact = u0.scaled((-k * k * t_end).exp());
    let end = traj.snapshot(traj.len() - 1);
    Ok(end.sub(&exact)?.lp_norm(2.0)? / exact.lp_norm(2.0)?)
}

/// Temporal order: fine grid, decreasing `dt`.
pub fn heat_temporal(points: usize, dts: &[f64], t_end: f64) -> Result<ConvergenceStudy> {
    let pts = dts.iter().map(|&dt| Ok((dt, heat_error(points, dt, t_end)?))).collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceStudy { study: "heat_temporal".into(), order: log_log_fit(&pts).slope, points: pts })
}

/// Spatial order: tiny `dt`, increasing `N`.
pub fn heat_spatial(points: &[usize], dt: f64, t_end: f64) -> Result<ConvergenceStudy> {
    let pts = points.iter().map(|&n| Ok((1.0 / n as f64, heat_error(n, dt, t_end)?))).collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceStudy { study: "heat_spatial".into(), order: log_log_fit(&pts).slope, points: pts })
}

/// Additive noise `g_i = c_i cos(2π i x)`, `f = 0`, `A = I`. For each `dt` in
/// `dts` (coarsest first, successive halvings) the error is the root-mean-square
/// over `paths` of `‖u_{dt}(T) − u_{dt/2}(T)‖₂`, all levels driven by the same
/// Brownian path generated at the finest step.
pub fn additive_self_convergence(points: usize, dts: &[f64], t_end: f64, paths: u64, seed: u64) -> Result<ConvergenceStudy> {
    const MODES: usize = 4;
    let grid = Grid::new(1, 1.0, points)?;
    let k = std::f64::consts::TAU;
    let mut kappa = vec![Field::zeros(grid)];
    for i in 1..=MODES {
        kappa.push(Field::from_fn(grid, |x| 0.5 / i as f64 * (k * i as f64 * x[0]).cos()));
    }
    let nl = Nonlinearity::new(kappa, vec![0.0; MODES + 1], None)?;
    let u0 = Field::from_fn(grid, |x| (k * x[0]).sin());
    let finest = dts.last().copied().unwrap_or(1.0) / 2.0;
    let mut sq = vec![0.0; dts.len()];
    for p in 0..paths {
        let fine_path = NoisePath::generate(MODES, 0.0, t_end, finest, StreamKey::new(seed, p, StreamRole::Noise))?;
        let mut ends = Vec::new();
        for &dt in dts.iter().chain(std::iter::once(&finest)) {
            let factor = (dt / finest).round() as usize;
            let path = fine_path.coarsen(factor)?;
            let ps = heat_problem(grid, u0.clone(), nl.clone(), t_end, dt)?;
            let traj = solve_with(&ps, &CoefficientSchedule::identity(grid), &path)?.trajectory;
            ends.push(traj.snapshot(traj.len() - 1).clone());
        }
        for (j, s) in sq.iter_mut().enumerate() {
            *s += ends[j].sub(&ends[j + 1])?.lp_norm(2.0)?.powi(2);
        }
    }
    let pts: Vec<(f64, f64)> = dts.iter().zip(&sq).map(|(&dt, &s)| (dt, (s / paths as f64).sqrt())).collect();
    Ok(ConvergenceStudy { study: "additive_self_convergence".into(), order: log_log_fit(&pts).slope, points: pts })
}

/// The three studies at their default sizes.
pub fn default_studies() -> Result<Vec<ConvergenceStudy>> {
    Ok(vec![
        heat_temporal(256, &[4e-3, 2e-3, 1e-3, 5e-4], 0.1)?,
        heat_spatial(&[16, 32, 64, 128], 1e-6, 0.01)?,
        additive_self_convergence(64, &[8e-3, 4e-3, 2e-3], 0.512, 8, 2024)?,
    ])
}
