//! JSON run configuration. Unknown keys are rejected and every range is
//! checked before any path runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{EllipticitySpec, GrowthData, Nonlinearity, NonlinearityParams};
use crate::error::{Result, SpdeError};
use crate::grid::{Field, Grid};
use crate::rng::{StreamKey, StreamRole};
use crate::solver::{ProblemSpec, Scheme};
use crate::synthetic::random_signs;
use crate::verify::ReflectionParams;

/// Environment variable overriding `ensemble.thread_count`.
pub const THREADS_ENV: &str = "SPDE_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub studies: StudyConfig,
    #[serde(default)]
    pub reflection: ReflectionParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Space dimension `n`.
    pub dim: usize,
    /// Box side `L`.
    pub length: f64,
    /// Nodes per axis `N`.
    pub points: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Ellipticity `λ`.
    pub lambda: f64,
    /// Coefficient refresh period.
    pub epoch_dt: f64,
    /// Coefficient patch size in nodes.
    pub cell: usize,
    /// Growth constant `Λ ≥ 1`.
    pub growth_lambda: f64,
    /// `‖K‖₂ + ‖K‖_∞` before normalization.
    pub k_budget: f64,
    /// Radius of the hat-shaped `K`.
    pub k_radius: f64,
    pub initial: InitialData,
    #[serde(default)]
    pub nonlinearity: NonlinearityParams,
    /// Rescale `u₀` and `K` onto the unit budget when they exceed it.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Factor applied to `u₀` and all `κ` after normalization.
    #[serde(default = "one")]
    pub data_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    /// Hat of the given radius around the centre, scaled to `‖u₀‖₂ = norm`.
    Bump {
        norm: f64,
        radius: f64,
    },
    /// `sin(2π·wave·x₀/L)` scaled to `‖u₀‖₂ = norm`.
    Sine {
        norm: f64,
        wave: u32,
    },
    /// Independent `±1` nodes scaled to `‖u₀‖₂ = norm`, seeded by the run seed.
    Rough {
        norm: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: u64,
    pub run_seed: u64,
    #[serde(default = "one_usize")]
    pub thread_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub a_grid: Vec<f64>,
    pub k_max: usize,
    /// Two-dimensional iteration exponent, in `(0, 1/3)`.
    pub mu: f64,
    pub m_grid: Vec<f64>,
    /// Ratio of the `E_k` cascade.
    pub gamma: f64,
    /// Level-set measures are kept at every `levelset_stride`-th node.
    pub levelset_stride: usize,
    /// Every `exact_stride`-th step enters the summation-by-parts check.
    pub exact_stride: usize,
    pub holder: bool,
    /// Start of the companion equation.
    pub split_start: f64,
    pub moment_p: Vec<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            a_grid: vec![1.0, 2.0, 4.0],
            k_max: 8,
            mu: 0.3,
            m_grid: vec![4.0, 8.0, 16.0, 32.0],
            gamma: 0.5,
            levelset_stride: 50,
            exact_stride: 10,
            holder: true,
            split_start: 0.5,
            moment_p: vec![2.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Dump every `s`-th snapshot of each path; 0 disables dumping.
    pub snapshot_stride: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Also run the ensemble at `2N` and `dt/2` into `refined/`.
    pub refine: bool,
    /// Extra data scales, each run into `scale_<s>/`.
    pub scales: Vec<f64>,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn config_err(msg: impl Into<String>) -> SpdeError {
    SpdeError::Config(msg.into())
}

/// Problem data ready for the solver.
#[derive(Clone, Debug)]
pub struct BuiltProblem {
    pub spec: ProblemSpec<f64>,
    /// Factor applied to `u₀` and `K` to reach the unit budget (1 if none).
    pub normalization: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Worker count after the environment override.
    pub fn threads(&self) -> usize {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n: &usize| n > 0).unwrap_or(self.ensemble.thread_count)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.problem.dim, self.problem.length, self.problem.points).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        self.grid()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("{name} = {v} must be positive")))
            }
        };
        positive("dt", p.dt)?;
        positive("k_radius", p.k_radius)?;
        positive("data_scale", p.data_scale)?;
        if !(p.t_end >= 2.0) {
            return Err(config_err(format!("t_end = {} must cover the window [0, 2]", p.t_end)));
        }
        crate::trajectory::step_count(0.0, p.t_end, p.dt).map_err(|e| config_err(e.to_string()))?;
        crate::trajectory::step_count(0.0, 2.0, p.dt).map_err(|e| config_err(format!("dt must divide 2: {e}")))?;
        if !(p.k_budget >= 0.0) {
            return Err(config_err("k_budget must be nonnegative"));
        }
        match p.initial {
            InitialData::Zero => {}
            InitialData::Bump { norm, radius } => {
                positive("initial.radius", radius)?;
                if !(norm >= 0.0) {
                    return Err(config_err("initial.norm must be nonnegative"));
                }
            }
            InitialData::Sine { norm, .. } | InitialData::Rough { norm } => {
                if !(norm >= 0.0) {
                    return Err(config_err("initial.norm must be nonnegative"));
                }
            }
        }
        let e = &self.ensemble;
        if e.n_paths == 0 {
            return Err(config_err("n_paths must be at least 1"));
        }
        if e.thread_count == 0 {
            return Err(config_err("thread_count must be at least 1"));
        }
        let d = &self.diagnostics;
        if d.a_grid.is_empty() || d.a_grid.iter().any(|&a| !(a >= 1.0 && a.is_finite())) {
            return Err(config_err("a_grid must be nonempty with every a >= 1"));
        }
        if d.k_max == 0 || d.k_max > 30 {
            return Err(config_err(format!("k_max = {} not in 1..=30", d.k_max)));
        }
        if !(d.mu > 0.0 && d.mu < 1.0 / 3.0) {
            return Err(config_err(format!("mu = {} not in (0, 1/3)", d.mu)));
        }
        if d.m_grid.is_empty() || d.m_grid.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(config_err("m_grid must be nonempty and positive"));
        }
        if !(d.gamma > 0.0 && d.gamma < 1.0) {
            return Err(config_err(format!("gamma = {} not in (0, 1)", d.gamma)));
        }
        if d.levelset_stride == 0 || d.exact_stride == 0 {
            return Err(config_err("strides must be at least 1"));
        }
        if !(d.split_start >= 0.0 && d.split_start < 1.0) {
            return Err(config_err(format!("split_start = {} not in [0, 1)", d.split_start)));
        }
        crate::trajectory::step_count(0.0, d.split_start, p.dt)
            .or_else(|e| if d.split_start == 0.0 { Ok(0) } else { Err(e) })
            .map_err(|_| config_err("split_start must be a multiple of dt"))?;
        if d.moment_p.iter().any(|&q| !(q >= 1.0)) {
            return Err(config_err("moment_p entries must be >= 1"));
        }
        if d.holder && p.points < 32 {
            return Err(config_err("Hölder estimation needs N >= 32 (four dyadic scales)"));
        }
        if self.studies.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(config_err("study scales must be positive"));
        }
        let r = &self.reflection;
        if !(r.b > 0.0 && r.horizon > 0.0 && r.dt > 0.0) || r.paths == 0 {
            return Err(config_err("reflection parameters must be positive"));
        }
        crate::trajectory::step_count(0.0, r.horizon, r.dt).map_err(|e| config_err(e.to_string()))?;
        self.build().map(|_| ())
    }

    /// Assembles the solver input: `u₀`, `K`, the nonlinearity and the coefficient model.
    pub fn build(&self) -> Result<BuiltProblem> {
        let p = &self.problem;
        let grid = self.grid()?;
        let ellipticity = EllipticitySpec { lambda: p.lambda, epoch_dt: p.epoch_dt, cell: p.cell };
        ellipticity.validate(&grid, p.dt).map_err(|e| config_err(e.to_string()))?;
        let shape: Field<f64> = match p.initial {
            InitialData::Zero => Field::zeros(grid),
            InitialData::Bump { radius, .. } => {
                let c = 0.5 * grid.length();
                let dim = grid.dim();
                Field::from_fn(grid, |x| {
                    let d2: f64 = x[..dim].iter().map(|xi| (xi - c).powi(2)).sum();
                    (1.0 - d2.sqrt() / radius).max(0.0)
                })
            }
            InitialData::Sine { wave, .. } => {
                let k = std::f64::consts::TAU * wave as f64 / grid.length();
                Field::from_fn(grid, |x| (k * x[0]).sin())
            }
            InitialData::Rough { .. } => random_signs(grid, &StreamKey::new(self.ensemble.run_seed, 0, StreamRole::InitialData)),
        };
        let target = match p.initial {
            InitialData::Zero => 0.0,
            InitialData::Bump { norm, .. } | InitialData::Sine { norm, .. } | InitialData::Rough { norm } => norm,
        };
        let shape_norm = shape.lp_norm(2.0)?;
        let u0 = if shape_norm > 0.0 { shape.scaled(target / shape_norm) } else { shape };
        let growth = GrowthData::bump(grid, p.k_budget, p.k_radius, p.growth_lambda).map_err(|e| config_err(e.to_string()))?;
        let u0_norm = u0.lp_norm(2.0)?;
        let k_norm = growth.k_l2() + growth.k_inf();
        let mut normalization = 1.0f64;
        if p.normalize {
            if u0_norm > 1.0 {
                normalization = normalization.min(1.0 / u0_norm);
            }
            if k_norm > 1.0 {
                normalization = normalization.min(1.0 / k_norm);
            }
        }
        let s = normalization * p.data_scale;
        let growth = growth.scaled(s);
        let nonlinearity = Nonlinearity::from_params(&growth, &p.nonlinearity).map_err(|e| config_err(e.to_string()))?;
        let probes: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.5).collect();
        let report = nonlinearity.validate_growth(&growth, &probes);
        if !report.pass {
            return Err(config_err(format!("nonlinearity violates the growth bound (slack {:e})", report.worst_slack)));
        }
        let spec = ProblemSpec { grid, ellipticity, growth, nonlinearity, u0: u0.scaled(s), t_end: p.t_end, dt: p.dt, scheme: p.scheme };
        spec.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(BuiltProblem { spec, normalization })
    }

    /// The same run at `2N`, `dt/2` and twice the patch size in nodes.
    pub fn refined(&self) -> Self {
        let mut c = self.clone();
        c.problem.points *= 2;
        c.problem.dt /= 2.0;
        c.problem.cell *= 2;
        c.diagnostics.levelset_stride *= 2;
        c.diagnostics.exact_stride *= 2;
        c.studies = StudyConfig::default();
        c
    }

    /// The same run with `u₀` and `K` multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut c = self.clone();
        c.problem.data_scale *= s;
        c.studies = StudyConfig::default();
        c
    }
}
