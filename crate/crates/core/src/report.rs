//! Check evaluation over run directories and the CSV/JSON outputs consumed by
//! plotting tools.
//!
//! | file             | columns                                                   |
//! |------------------|-----------------------------------------------------------|
//! | summary.json     | array of check results                                    |
//! | levels.csv       | path_id, a, k, U, X_star, qv, t, levelset                 |
//! | tails.csv        | a, M, paths, frequency, bound, std_err, holds             |
//! | holder.csv       | path_id, alpha_hat, seminorm, sup_abs, v_alpha, phi_alpha |
//! | convergence.csv  | study, parameter, error, order                            |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::convergence::{default_studies, ConvergenceStudy};
use crate::ensemble::{load_run, scale_dir, EnsembleResult, PathData, REFINED_DIR};
use crate::error::{Result, SpdeError};
use crate::verify::{self, CheckMode, CheckResult, DataNorms, PathHolder, PathMoments, PathTail, ScaledEnsemble, TailRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Degiorgi,
    Tail,
    Moment,
    Holder,
    /// Brownian drawup bound, `lemma31` on the command line.
    #[serde(rename = "lemma31")]
    Reflection,
}

impl FromStr for Suite {
    type Err = SpdeError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Self::All,
            "degiorgi" => Self::Degiorgi,
            "tail" => Self::Tail,
            "moment" => Self::Moment,
            "holder" => Self::Holder,
            "lemma31" => Self::Reflection,
            other => return Err(SpdeError::InvalidArgument(format!("unknown suite {other}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = SpdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(SpdeError::InvalidArgument(format!("unknown format {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub path_id: u64,
    pub a: f64,
    pub k: usize,
    #[serde(rename = "U")]
    pub energy: f64,
    #[serde(rename = "X_star")]
    pub x_star: f64,
    pub qv: f64,
    pub t: f64,
    pub levelset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCsvRow {
    pub a: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub paths: usize,
    pub frequency: f64,
    pub bound: f64,
    pub std_err: f64,
    pub holds: bool,
}

impl From<TailRow> for TailCsvRow {
    fn from(r: TailRow) -> Self {
        Self { a: r.a, m: r.m, paths: r.paths, frequency: r.frequency, bound: r.bound, std_err: r.std_err, holds: r.holds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub path_id: u64,
    pub alpha_hat: Option<f64>,
    /// `[u]_α` at the ensemble-median exponent.
    pub seminorm: Option<f64>,
    pub sup_abs: f64,
    pub v_alpha: Option<f64>,
    pub phi_alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub study: String,
    pub parameter: f64,
    pub error: f64,
    pub order: f64,
}

/// One row per level-set sample of every `(path, a, k)`.
pub fn level_rows(run: &EnsembleResult) -> Vec<LevelRow> {
    let mut rows = Vec::new();
    for r in &run.records {
        let Some(d) = &r.data else { continue };
        for l in &d.levels {
            for &(t, levelset) in &l.levelset {
                rows.push(LevelRow { path_id: r.path_id, a: l.a, k: l.k, energy: l.energy, x_star: l.x_star, qv: l.qv, t, levelset });
            }
        }
    }
    rows
}

fn tails(run: &EnsembleResult) -> Vec<PathTail> {
    run.data().map(PathData::tail).collect()
}

pub fn tail_rows(run: &EnsembleResult) -> Vec<TailCsvRow> {
    let d = &run.config.diagnostics;
    verify::tail_table(&tails(run), &d.a_grid, &d.m_grid, run.config.problem.dim).into_iter().map(Into::into).collect()
}

fn holders(run: &EnsembleResult) -> Vec<PathHolder> {
    run.data().filter_map(|d| d.holder.clone()).collect()
}

pub fn holder_rows(run: &EnsembleResult) -> Vec<HolderRow> {
    let alpha = verify::median_alpha(&holders(run));
    run.records
        .iter()
        .filter_map(|r| {
            let h = r.data.as_ref()?.holder.as_ref()?;
            Some(HolderRow {
                path_id: r.path_id,
                alpha_hat: h.alpha,
                seminorm: alpha.is_finite().then(|| crate::degiorgi::seminorm_from_modulus(&h.modulus, alpha)),
                sup_abs: h.sup_abs,
                v_alpha: h.v_alpha,
                phi_alpha: h.phi_alpha,
            })
        })
        .collect()
}

pub fn convergence_rows(studies: &[ConvergenceStudy]) -> Vec<ConvergenceRow> {
    studies
        .iter()
        .flat_map(|s| s.points.iter().map(|&(parameter, error)| ConvergenceRow { study: s.study.clone(), parameter, error, order: s.order }))
        .collect()
}

fn load_optional(dir: &Path) -> Result<Option<EnsembleResult>> {
    if dir.join(crate::ensemble::CONFIG_FILE).exists() {
        load_run(dir).map(Some)
    } else {
        Ok(None)
    }
}

fn data_norms(run: &EnsembleResult) -> Result<DataNorms> {
    let built = run.config.build()?;
    DataNorms::of(&built.spec.u0, &built.spec.growth)
}

fn failure_check(run: &EnsembleResult) -> CheckResult {
    let failed: Vec<_> = run.records.iter().filter(|r| r.error.is_some()).map(|r| json!({ "path_id": r.path_id, "error": r.error })).collect();
    CheckResult {
        name: "path_failures".into(),
        mode: CheckMode::Exact,
        pass: failed.is_empty() && run.records.len() as u64 == run.config.ensemble.n_paths,
        margin: -(failed.len() as f64),
        details: vec![json!({ "paths": run.records.len(), "expected": run.config.ensemble.n_paths, "failed": failed })],
    }
}

/// Exact checks of every path merged by name, in path order.
pub fn exact_suite(run: &EnsembleResult) -> Vec<CheckResult> {
    let mut names: Vec<String> = Vec::new();
    for d in run.data() {
        for c in &d.exact {
            if !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
    }
    names
        .iter()
        .map(|n| {
            let parts: Vec<CheckResult> = run.data().flat_map(|d| d.exact.iter().filter(|c| &c.name == n).cloned()).collect();
            CheckResult::merge(n, &parts)
        })
        .collect()
}

fn constants(run: &EnsembleResult, f: impl Fn(&PathData) -> f64) -> Vec<f64> {
    run.data().map(f).collect()
}

fn label(run: &EnsembleResult) -> String {
    format!("N={} dt={}", run.config.problem.points, run.config.problem.dt)
}

/// Runs the selected checks on a run directory.
pub fn evaluate(dir: &Path, suite: Suite) -> Result<Vec<CheckResult>> {
    let run = load_run(dir)?;
    let refined = load_optional(&dir.join(REFINED_DIR))?;
    let wants = |s: Suite| suite == Suite::All || suite == s;
    let d = &run.config.diagnostics;
    let dim = run.config.problem.dim;
    let mut out = Vec::new();
    if wants(Suite::Degiorgi) {
        out.push(failure_check(&run));
        out.extend(exact_suite(&run));
        let mut iter = vec![(label(&run), constants(&run, |p| p.iteration_constant))];
        let mut qv = vec![(label(&run), constants(&run, |p| p.qv_constant))];
        if let Some(r) = &refined {
            iter.push((label(r), constants(r, |p| p.iteration_constant)));
            qv.push((label(r), constants(r, |p| p.qv_constant)));
        }
        out.push(verify::check_fitted_stability("iteration", &iter));
        out.push(verify::check_fitted_stability("qv_bound", &qv));
    }
    if wants(Suite::Tail) {
        let all = tails(&run);
        let half = &all[..all.len() / 2];
        let ensembles: Vec<&[PathTail]> = if half.is_empty() { vec![&all] } else { vec![half, &all] };
        out.push(verify::check_tail(&ensembles, &d.a_grid, &d.m_grid, dim, &data_norms(&run)?)?);
    }
    if wants(Suite::Moment) {
        let mut runs = vec![(1.0, run.clone())];
        for &s in &run.config.studies.scales {
            if let Some(r) = load_optional(&dir.join(scale_dir(s)))? {
                runs.push((s, r));
            }
        }
        let data: Vec<(f64, DataNorms, Vec<PathMoments>)> =
            runs.iter().map(|(s, r)| Ok((*s, data_norms(r)?, r.data().map(PathData::moment_data).collect()))).collect::<Result<_>>()?;
        for &p in &d.moment_p {
            let ens: Vec<ScaledEnsemble<'_>> = data.iter().map(|(s, n, m)| ScaledEnsemble { scale: *s, data: *n, paths: m }).collect();
            out.push(verify::check_moment(&ens, p));
        }
    }
    if wants(Suite::Holder) && d.holder {
        let coarse = holders(&run);
        let fine = refined.as_ref().map(holders);
        out.push(verify::check_holder_moment(&coarse, fine.as_deref(), &d.moment_p));
    }
    if wants(Suite::Reflection) {
        out.push(verify::check_reflection_bound(&run.config.reflection)?);
    }
    Ok(out)
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> SpdeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SpdeError::Io(io),
        other => SpdeError::Format(format!("{other:?}")),
    }
}

/// Writes the report files into the run directory and returns their paths.
pub fn write_report(dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let run = load_run(dir)?;
    let checks = evaluate(dir, Suite::All)?;
    let studies = default_studies()?;
    let levels = level_rows(&run);
    let tails = tail_rows(&run);
    let holder = holder_rows(&run);
    let convergence = convergence_rows(&studies);
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_vec_pretty(&checks)?)?;
    match format {
        Format::Csv => {
            let files = [dir.join("levels.csv"), dir.join("tails.csv"), dir.join("holder.csv"), dir.join("convergence.csv")];
            write_csv(&files[0], &levels)?;
            write_csv(&files[1], &tails)?;
            write_csv(&files[2], &holder)?;
            write_csv(&files[3], &convergence)?;
            Ok(std::iter::once(summary).chain(files).collect())
        }
        Format::Json => {
            let file = dir.join("report.json");
            let body = json!({
                "checks": checks,
                "levels": levels,
                "tails": tails,
                "holder": holder,
                "convergence": convergence,
            });
            fs::write(&file, serde_json::to_vec_pretty(&body)?)?;
            Ok(vec![summary, file])
        }
    }
}
