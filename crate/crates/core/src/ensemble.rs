//! Monte Carlo driver: one solve plus diagnostics per path, flushed to its own
//! file so an interrupted run resumes where it stopped.
//!
//! Layout of a run directory:
//! ```text
//! config.json            the validated configuration
//! manifest.json          hash, seeds, version, threads, wall time
//! paths/path_000042.json one PathRecord per path
//! snapshots/             optional binary trajectories
//! refined/, scale_<s>/   study variants, same layout
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{BuiltProblem, RunConfig};
use crate::degiorgi::{estimate_alpha, first_ek_violation, level_cascade, level_energy, sup_norm, LevelDiagnostics, SupKind};
use crate::error::{Result, SpdeError};
use crate::noise::NoisePath;
use crate::rng::{StreamKey, StreamRole};
use crate::snapshot::write_trajectory;
use crate::solver::{solve_companion, solve_with};
use crate::trajectory::trapezoid;
use crate::verify::{self, CheckResult, DataNorms, PathHolder, PathMoments, PathTail};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATHS_DIR: &str = "paths";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const REFINED_DIR: &str = "refined";

/// Window of the sup-norm and Hölder diagnostics.
pub const WINDOW: (f64, f64) = (1.0, 2.0);

pub fn scale_dir(s: f64) -> String {
    format!("scale_{s}")
}

/// First `k` violating `E_k` for one `(a, M)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EkRow {
    pub a: f64,
    pub m: f64,
    pub first_violation: Option<usize>,
}

/// Everything kept from one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathData {
    /// `‖u⁺‖_{∞,[1,2]}`.
    pub sup_plus: f64,
    /// `‖u‖_{∞,[1,2]}`.
    pub sup_abs: f64,
    /// `‖u⁺‖_{4,2,[0,2]}`.
    pub norm_plus: f64,
    /// `(p, ∫₀² ‖u‖₂^p dt)`.
    pub moments: Vec<(f64, f64)>,
    pub cg_max_iterations: usize,
    #[serde(with = "crate::verify::lenient_f64")]
    pub cg_max_residual: f64,
    pub levels: Vec<LevelDiagnostics>,
    /// Per-path fitted constant of the level iteration.
    #[serde(with = "crate::verify::lenient_f64")]
    pub iteration_constant: f64,
    /// Per-path fitted constant of the quadratic-variation bound.
    #[serde(with = "crate::verify::lenient_f64")]
    pub qv_constant: f64,
    pub ek: Vec<EkRow>,
    pub holder: Option<PathHolder>,
    /// Exact-mode checks on this path.
    pub exact: Vec<CheckResult>,
}

impl PathData {
    pub fn tail(&self) -> PathTail {
        PathTail { sup_plus: self.sup_plus, norm_plus: self.norm_plus }
    }

    pub fn moment_data(&self) -> PathMoments {
        PathMoments { time_integrals: self.moments.clone(), sup_abs: self.sup_abs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_id: u64,
    /// Solver or diagnostic failure; the run continues without this path.
    pub error: Option<String>,
    pub data: Option<PathData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    pub run_seed: u64,
    pub n_paths: u64,
    /// How per-path streams are derived from the run seed.
    pub seed_rule: String,
    pub thread_count: usize,
    pub normalization: f64,
    pub completed: usize,
    pub resumed: usize,
    pub failures: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub config: RunConfig,
    /// Sorted by `path_id`.
    pub records: Vec<PathRecord>,
    pub manifest: Manifest,
}

impl EnsembleResult {
    pub fn data(&self) -> impl Iterator<Item = &PathData> {
        self.records.iter().filter_map(|r| r.data.as_ref())
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    format!("{:x}", Sha256::digest(&bytes))
}

fn path_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(PATHS_DIR).join(format!("path_{id:06}.json"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tag_path(mut r: CheckResult, id: u64) -> CheckResult {
    for d in &mut r.details {
        if let Some(obj) = d.as_object_mut() {
            obj.insert("path_id".into(), json!(id));
        }
    }
    r
}

/// Solves path `id` and computes its diagnostics. Snapshots go to `snapshot_dir` if given.
pub fn compute_path(cfg: &RunConfig, built: &BuiltProblem, id: u64, snapshot_dir: Option<&Path>) -> Result<PathData> {
    let spec = &built.spec;
    let d = &cfg.diagnostics;
    let nl = &spec.nonlinearity;
    let key = StreamKey::new(cfg.ensemble.run_seed, id, StreamRole::Noise);
    let path = NoisePath::generate(nl.modes(), 0.0, spec.t_end, spec.dt, key)?;
    let schedule = spec.schedule(&key);
    let solved = solve_with(spec, &schedule, &path)?;
    let traj = solved.trajectory;
    if let (Some(dir), stride) = (snapshot_dir, cfg.output.snapshot_stride) {
        if stride > 0 {
            let mut w = std::io::BufWriter::new(fs::File::create(dir.join(format!("path_{id:06}.bin")))?);
            write_trajectory(&mut w, &traj, stride)?;
        }
    }

    let (i0, i1) = traj.node_range(0.0, 2.0)?;
    let l2: Vec<f64> = traj.snapshots()[i0..=i1].iter().map(|f| f.lp_norm(2.0)).collect::<Result<_>>()?;
    let moments = d.moment_p.iter().map(|&p| (p, trapezoid(&l2.iter().map(|n| n.powf(p)).collect::<Vec<_>>(), traj.dt()))).collect();

    let mut levels = Vec::new();
    for &a in &d.a_grid {
        levels.extend(level_cascade(&traj, &path, nl, a, d.k_max, d.levelset_stride)?);
    }
    let mut ek = Vec::new();
    for &a in &d.a_grid {
        for &m in &d.m_grid {
            ek.push(EkRow { a, m, first_violation: first_ek_violation(&levels, a, m, d.gamma) });
        }
    }

    let mut exact = vec![verify::check_summation_by_parts(&traj, &schedule, d.exact_stride)?];
    let cheb = d.a_grid.iter().map(|&a| verify::check_chebyshev(&traj, a, d.k_max)).collect::<Result<Vec<_>>>()?;
    exact.push(CheckResult::merge("chebyshev", &cheb));
    exact.push(verify::check_monotonicity(&levels));
    let mvt = d.a_grid.iter().map(|&a| verify::check_mean_value(&traj, a, d.k_max)).collect::<Result<Vec<_>>>()?;
    exact.push(CheckResult::merge("mean_value", &mvt));
    if DataNorms::of(&spec.u0, &spec.growth)?.ensure_budget().is_ok() {
        exact.push(verify::check_exponential_bounds(&traj, nl, &schedule, &spec.growth)?);
    }

    let holder = if d.holder {
        let est = estimate_alpha(&traj, WINDOW)?;
        let split = solve_companion(&traj, nl, &path, d.split_start)?;
        exact.push(verify::check_split_identity(&traj, &split)?);
        let alpha_of = |e: crate::degiorgi::AlphaEstimate| if e.degenerate { None } else { Some(e.alpha) };
        let v_alpha = alpha_of(estimate_alpha(&split.v, WINDOW)?);
        let phi_alpha = alpha_of(estimate_alpha(&split.phi, WINDOW)?);
        Some(PathHolder {
            alpha: (!est.degenerate).then_some(est.alpha),
            std_err: (!est.degenerate).then_some(est.std_err),
            modulus: est.modulus,
            sup_abs: sup_norm(&traj, WINDOW, SupKind::Abs)?,
            v_alpha,
            phi_alpha,
        })
    } else {
        None
    };

    Ok(PathData {
        sup_plus: sup_norm(&traj, WINDOW, SupKind::Plus)?,
        sup_abs: sup_norm(&traj, WINDOW, SupKind::Abs)?,
        norm_plus: level_energy(&traj, 0, 1.0)?.sqrt(),
        moments,
        cg_max_iterations: solved.cg_iterations.iter().copied().max().unwrap_or(0),
        cg_max_residual: solved.cg_residuals.iter().copied().fold(0.0, f64::max),
        iteration_constant: verify::iteration_constant(&levels, spec.grid.dim(), d.mu)?,
        qv_constant: verify::qv_constant(&levels),
        levels,
        ek,
        holder,
        exact: exact.into_iter().map(|r| tag_path(r, id)).collect(),
    })
}

/// Like [`compute_path`] but never fails: errors are recorded in the record.
pub fn run_path(cfg: &RunConfig, built: &BuiltProblem, id: u64, snapshot_dir: Option<&Path>) -> PathRecord {
    match compute_path(cfg, built, id, snapshot_dir) {
        Ok(data) => PathRecord { path_id: id, error: None, data: Some(data) },
        Err(e) => PathRecord { path_id: id, error: Some(e.to_string()), data: None },
    }
}

fn read_record(file: &Path) -> Option<PathRecord> {
    let bytes = fs::read(file).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// Runs the configured ensemble into `out`, then any refinement and scale studies
/// into subdirectories. Returns the base ensemble.
pub fn run_ensemble(cfg: &RunConfig, out: &Path) -> Result<EnsembleResult> {
    cfg.validate()?;
    let base = run_single(cfg, out)?;
    if cfg.studies.refine {
        run_single(&cfg.refined(), &out.join(REFINED_DIR))?;
    }
    for &s in &cfg.studies.scales {
        run_single(&cfg.scaled(s), &out.join(scale_dir(s)))?;
    }
    Ok(base)
}

/// Runs one ensemble without studies, resuming paths already on disk.
pub fn run_single(cfg: &RunConfig, out: &Path) -> Result<EnsembleResult> {
    let started = Instant::now();
    cfg.validate()?;
    let built = cfg.build()?;
    fs::create_dir_all(out.join(PATHS_DIR))?;
    let config_path = out.join(CONFIG_FILE);
    let config_text = cfg.to_json();
    if config_path.exists() {
        let existing = RunConfig::from_json(&fs::read_to_string(&config_path)?)?;
        if config_hash(&existing) != config_hash(cfg) {
            return Err(SpdeError::Config(format!("{} holds a different run", out.display())));
        }
    } else {
        write_atomic(&config_path, config_text.as_bytes())?;
    }
    let snapshot_dir = (cfg.output.snapshot_stride > 0).then(|| out.join(SNAPSHOT_DIR));
    if let Some(dir) = &snapshot_dir {
        fs::create_dir_all(dir)?;
    }
    let todo: Vec<u64> = (0..cfg.ensemble.n_paths).filter(|&id| read_record(&path_file(out, id)).is_none_or(|r| r.path_id != id)).collect();
    let resumed = cfg.ensemble.n_paths as usize - todo.len();
    let threads = cfg.threads();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| SpdeError::InvalidArgument(e.to_string()))?;
    pool.install(|| {
        todo.par_iter().try_for_each(|&id| {
            let record = run_path(cfg, &built, id, snapshot_dir.as_deref());
            write_atomic(&path_file(out, id), &serde_json::to_vec_pretty(&record)?)
        })
    })?;
    let records = load_records(out)?;
    let manifest = Manifest {
        config_hash: config_hash(cfg),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        run_seed: cfg.ensemble.run_seed,
        n_paths: cfg.ensemble.n_paths,
        seed_rule: "ChaCha8 keyed by (run_seed, path_id, role); noise mode i on substream i, coefficient epoch e on substream e".into(),
        thread_count: threads,
        normalization: built.normalization,
        completed: records.iter().filter(|r| r.data.is_some()).count(),
        resumed,
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_atomic(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(EnsembleResult { config: cfg.clone(), records, manifest })
}

/// All path records of a run directory, sorted by `path_id`.
pub fn load_records(dir: &Path) -> Result<Vec<PathRecord>> {
    let paths = dir.join(PATHS_DIR);
    let mut records = Vec::new();
    if paths.is_dir() {
        for entry in fs::read_dir(&paths)? {
            let file = entry?.path();
            if file.extension().and_then(|e| e.to_str()) == Some("json") {
                records.push(serde_json::from_slice::<PathRecord>(&fs::read(&file)?)?);
            }
        }
    }
    if records.is_empty() {
        return Err(SpdeError::NoResults(dir.display().to_string()));
    }
    records.sort_by_key(|r| r.path_id);
    Ok(records)
}

pub fn load_config(dir: &Path) -> Result<RunConfig> {
    let file = dir.join(CONFIG_FILE);
    if !file.exists() {
        return Err(SpdeError::NoResults(dir.display().to_string()));
    }
    RunConfig::load(&file)
}

/// A finished run directory read back from disk.
pub fn load_run(dir: &Path) -> Result<EnsembleResult> {
    let config = load_config(dir)?;
    let records = load_records(dir)?;
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    Ok(EnsembleResult { config, records, manifest })
}
