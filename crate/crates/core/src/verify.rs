//! Executable versions of the inequalities behind the regularity argument.
//!
//! Three kinds of check:
//! * exact: a discrete identity or inequality that must hold on every input up
//!   to round-off, `slack ≥ −1e−10·scale`;
//! * fitted: an implicit constant is fitted from data and must be finite and
//!   stable under refinement;
//! * Monte Carlo: an empirical frequency must not exceed a probability bound
//!   by more than three binomial standard errors.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coefficients::{CoefficientSchedule, GrowthData, Nonlinearity};
use crate::degiorgi::{level_energy, level_height, level_interval, seminorm_from_modulus, LevelDiagnostics, ScaleIncrement};
use crate::error::{Result, SpdeError};
use crate::grid::{dot, Field};
use crate::noise::NoisePath;
use crate::rng::{StreamKey, StreamRole};
use crate::scalar::Real;
use crate::solver::{CompanionSplit, WeakResidual};
use crate::stats::{binomial_std_err, mean, median};
use crate::stencil::DiffusionOperator;
use crate::trajectory::Trajectory;

/// Relative slack allowed in exact checks.
pub const EXACT_TOLERANCE: f64 = 1e-10;
/// Largest allowed ratio between fitted constants of refined ensembles.
pub const STABILITY_FACTOR: f64 = 10.0;
/// Monte Carlo tolerance in binomial standard errors.
pub const SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Exact,
    Fitted,
    MonteCarlo,
}

/// Outcome of one check. `margin` is the smallest relative slack (exact), the
/// fitted constant (fitted) or the smallest `bound + 3σ − frequency` (Monte Carlo).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub mode: CheckMode,
    pub pass: bool,
    #[serde(with = "lenient_f64")]
    pub margin: f64,
    pub details: Vec<Value>,
}

impl CheckResult {
    /// Combines results of one check over several inputs: all must pass, the
    /// margin is the worst one. Callers merge in path order.
    pub fn merge(name: &str, parts: &[CheckResult]) -> CheckResult {
        let mode = parts.first().map_or(CheckMode::Exact, |p| p.mode);
        let margin = parts.iter().map(|p| p.margin).fold(f64::INFINITY, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.min(b) });
        CheckResult {
            name: name.to_string(),
            mode,
            pass: !parts.is_empty() && parts.iter().all(|p| p.pass),
            margin,
            details: parts.iter().flat_map(|p| p.details.iter().cloned()).collect(),
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.details.push(detail);
        self
    }
}

/// Non-finite numbers as the strings `"inf"`, `"-inf"`, `"nan"`.
pub fn json_number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub(crate) mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// Running worst case of an exact check.
struct Tally {
    name: &'static str,
    worst: f64,
    worst_at: Value,
    instances: usize,
    vacuous: usize,
    failures: usize,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self { name, worst: f64::INFINITY, worst_at: Value::Null, instances: 0, vacuous: 0, failures: 0 }
    }

    fn record(&mut self, rel: f64, at: impl FnOnce() -> Value) {
        self.instances += 1;
        if !(rel >= -EXACT_TOLERANCE) {
            self.failures += 1;
        }
        if rel < self.worst || rel.is_nan() && !self.worst.is_nan() {
            self.worst = rel;
            self.worst_at = at();
        }
    }

    /// `lhs ≤ rhs`, relative to `max(|lhs|, |rhs|)`. `0 ≤ 0` is vacuous.
    fn leq(&mut self, lhs: f64, rhs: f64, at: impl FnOnce() -> Value) {
        let scale = lhs.abs().max(rhs.abs());
        if scale == 0.0 {
            self.instances += 1;
            self.vacuous += 1;
            return;
        }
        self.record((rhs - lhs) / scale, at);
    }

    /// `a = b`, relative to `scale` (at least `max(|a|, |b|)`).
    fn identity(&mut self, a: f64, b: f64, scale: f64, at: impl FnOnce() -> Value) {
        let scale = scale.max(a.abs()).max(b.abs());
        if scale == 0.0 {
            self.instances += 1;
            self.vacuous += 1;
            return;
        }
        self.record(-(a - b).abs() / scale, at);
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            mode: CheckMode::Exact,
            pass: self.failures == 0,
            margin: self.worst,
            details: vec![json!({
                "instances": self.instances,
                "vacuous": self.vacuous,
                "failures": self.failures,
                "worst_slack": json_number(self.worst),
                "worst_at": self.worst_at,
            })],
        }
    }
}

/// Diffusion operator of the epoch at `t`, rebuilt only when the epoch changes.
struct OperatorCache<'a, T> {
    schedule: &'a CoefficientSchedule<T>,
    current: Option<(u64, DiffusionOperator<T>)>,
}

impl<'a, T: Real> OperatorCache<'a, T> {
    fn new(schedule: &'a CoefficientSchedule<T>) -> Self {
        Self { schedule, current: None }
    }

    fn at(&mut self, t: f64) -> Result<&DiffusionOperator<T>> {
        let epoch = self.schedule.epoch_at(t);
        if self.current.as_ref().map(|c| c.0) != Some(epoch) {
            self.current = Some((epoch, DiffusionOperator::new(&self.schedule.field(epoch)?)));
        }
        Ok(&self.current.as_ref().expect("filled above").1)
    }
}

/// `⟨div(A∇u^m), u^{m+1}⟩ = −Σ_faces A (Δu^m)(Δu^{m+1}) dxⁿ` on every `stride`-th step.
pub fn check_summation_by_parts<T: Real>(traj: &Trajectory<T>, schedule: &CoefficientSchedule<T>, stride: usize) -> Result<CheckResult> {
    traj.grid().ensure_same(schedule.grid())?;
    let mut tally = Tally::new("summation_by_parts");
    let mut ops = OperatorCache::new(schedule);
    let vol = traj.grid().cell_volume();
    let mut out = vec![T::zero(); traj.grid().len()];
    for m in (0..traj.len().saturating_sub(1)).step_by(stride.max(1)) {
        let op = ops.at(traj.time(m))?;
        let (f, h) = (traj.snapshot(m).values(), traj.snapshot(m + 1).values());
        op.apply(f, &mut out);
        let lhs = dot(&out, h).as_f64() * vol;
        let rhs = -op.dirichlet_form_raw(f, h).as_f64();
        let scale = out.iter().zip(h).map(|(&o, &v)| (o * v).abs().as_f64()).sum::<f64>() * vol;
        tally.identity(lhs, rhs, scale, || json!({ "t": traj.time(m) }));
    }
    Ok(tally.finish())
}

/// `|{u_{k,a}(t) > 0}| ≤ (2^k/a)² ‖u_{k−1,a}(t)‖₂²` for every snapshot and `1 ≤ k ≤ k_max`.
pub fn check_chebyshev<T: Real>(traj: &Trajectory<T>, a: f64, k_max: usize) -> Result<CheckResult> {
    if !(a >= 1.0) {
        return Err(SpdeError::InvalidArgument(format!("level base a = {a} must be at least 1")));
    }
    let mut tally = Tally::new("chebyshev");
    let vol = traj.grid().cell_volume();
    for k in 1..=k_max {
        let h_k = T::of(level_height(k, a));
        let h_prev = T::of(level_height(k - 1, a));
        let factor = (2f64.powi(k as i32) / a).powi(2);
        for (m, f) in traj.snapshots().iter().enumerate() {
            let mut count = 0usize;
            let mut energy = T::zero();
            for &v in f.values() {
                if v > h_k {
                    count += 1;
                }
                let w = (v - h_prev).max(T::zero());
                energy += w * w;
            }
            let lhs = count as f64 * vol;
            let rhs = factor * energy.as_f64() * vol;
            tally.leq(lhs, rhs, || json!({ "k": k, "a": a, "t": traj.time(m) }));
        }
    }
    Ok(tally.finish())
}

/// `U_{k,a} ≤ U_{k−1,a}` and `U_{k,a'} ≤ U_{k,a}` for `a' > a`, on cascade rows.
pub fn check_monotonicity(rows: &[LevelDiagnostics]) -> CheckResult {
    let mut tally = Tally::new("monotonicity");
    let mut sorted: Vec<&LevelDiagnostics> = rows.iter().collect();
    sorted.sort_by(|x, y| x.a.total_cmp(&y.a).then(x.k.cmp(&y.k)));
    for pair in sorted.windows(2) {
        let (p, q) = (pair[0], pair[1]);
        if p.a == q.a && q.k == p.k + 1 {
            tally.leq(q.energy, p.energy, || json!({ "a": q.a, "k": q.k, "direction": "k" }));
        }
    }
    for row in &sorted {
        if let Some(next) = sorted.iter().filter(|r| r.k == row.k && r.a > row.a).min_by(|x, y| x.a.total_cmp(&y.a)) {
            tally.leq(next.energy, row.energy, || json!({ "a": next.a, "k": next.k, "direction": "a" }));
        }
    }
    tally.finish()
}

/// Some node `t₀ ∈ I_{k−1} ∖ I_k` has `‖u_{k,a}(t₀)‖₂² ≤ 2^k U_{k−1,a}`.
/// Levels whose difference set holds no node are skipped.
pub fn check_mean_value<T: Real>(traj: &Trajectory<T>, a: f64, k_max: usize) -> Result<CheckResult> {
    let mut tally = Tally::new("mean_value");
    let vol = traj.grid().cell_volume();
    for k in 1..=k_max {
        let (j0, _) = traj.node_range(level_interval(k - 1).0, level_interval(k - 1).1)?;
        let (i0, _) = traj.node_range(level_interval(k).0, level_interval(k).1)?;
        if i0 <= j0 {
            continue;
        }
        let h = T::of(level_height(k, a));
        let best = (j0..i0)
            .map(|m| {
                let s: T = traj
                    .snapshot(m)
                    .values()
                    .iter()
                    .map(|&v| {
                        let w = (v - h).max(T::zero());
                        w * w
                    })
                    .sum();
                s.as_f64() * vol
            })
            .fold(f64::INFINITY, f64::min);
        let rhs = 2f64.powi(k as i32) * level_energy(traj, k - 1, a)?.as_f64();
        tally.leq(best, rhs, || json!({ "k": k, "a": a }));
    }
    Ok(tally.finish())
}

/// `u = φ + v` at every node of the split, and `v = 0` at its start.
pub fn check_split_identity<T: Real>(u: &Trajectory<T>, split: &CompanionSplit<T>) -> Result<CheckResult> {
    let mut tally = Tally::new("split_identity");
    let first = u.nearest_node(split.v.t0());
    for m in 0..split.v.len() {
        let (uf, vf, pf) = (u.snapshot(first + m), split.v.snapshot(m), split.phi.snapshot(m));
        let scale = uf.max_abs().as_f64() + vf.max_abs().as_f64() + pf.max_abs().as_f64();
        let worst =
            uf.values().iter().zip(vf.values().iter().zip(pf.values())).map(|(&x, (&y, &z))| (x - (y + z)).abs().as_f64()).fold(0.0, f64::max);
        tally.identity(worst, 0.0, scale, || json!({ "t": split.v.time(m) }));
    }
    tally.identity(split.v.snapshot(0).max_abs().as_f64(), 0.0, 0.0, || json!({ "t": split.v.t0(), "what": "v(start)" }));
    Ok(tally.finish())
}

/// Norms of the data `(u₀, K, Λ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataNorms {
    pub u0_l2: f64,
    pub k_l2: f64,
    pub k_inf: f64,
    pub growth: f64,
}

impl DataNorms {
    pub fn of<T: Real>(u0: &Field<T>, growth: &GrowthData<T>) -> Result<Self> {
        Ok(Self { u0_l2: u0.lp_norm(2.0)?.as_f64(), k_l2: growth.k_l2(), k_inf: growth.k_inf(), growth: growth.growth() })
    }

    /// `‖u₀‖₂ + ‖K‖₂ + ‖K‖_∞`.
    pub fn total(&self) -> f64 {
        self.u0_l2 + self.k_l2 + self.k_inf
    }

    /// `‖u₀‖₂ ≤ 1` and `‖K‖_∞ ≤ 1`.
    pub fn ensure_unit_data(&self) -> Result<()> {
        if self.u0_l2 > 1.0 + 1e-12 || self.k_inf > 1.0 + 1e-12 {
            return Err(SpdeError::NotNormalized(format!("the tail bound assumes ‖u₀‖₂ ≤ 1 and ‖K‖_∞ ≤ 1, got {} and {}", self.u0_l2, self.k_inf)));
        }
        Ok(())
    }

    /// `‖u₀‖₂ ≤ 1`, `‖K‖₂ + ‖K‖_∞ ≤ 1` and `Λ ≥ 1`.
    pub fn ensure_budget(&self) -> Result<()> {
        if self.u0_l2 > 1.0 + 1e-12 || self.k_l2 + self.k_inf > 1.0 + 1e-12 || self.growth < 1.0 {
            return Err(SpdeError::NotNormalized(format!(
                "need ‖u₀‖₂ ≤ 1, ‖K‖₂ + ‖K‖_∞ ≤ 1 and Λ ≥ 1, got {}, {} and {}",
                self.u0_l2,
                self.k_l2 + self.k_inf,
                self.growth
            )));
        }
        Ok(())
    }
}

/// `F(t) ≤ 4Λ²` at every snapshot of `[0, 2]` and `⟨G⟩_t ≤ 2Λ²`, where
/// `F = (−⟨A∇u,∇u⟩ + ⟨f(u),u⟩ + ‖g(u)‖₂²)/(‖u‖₂² + 1)` and `G` has integrand
/// `⟨g_i(u),u⟩/(‖u‖₂² + 1)`.
pub fn check_exponential_bounds<T: Real>(
    traj: &Trajectory<T>,
    nl: &Nonlinearity<T>,
    schedule: &CoefficientSchedule<T>,
    growth: &GrowthData<T>,
) -> Result<CheckResult> {
    DataNorms::of(traj.snapshot(0), growth)?.ensure_budget()?;
    let lam2 = growth.growth().powi(2);
    let vol = traj.grid().cell_volume();
    let tv = T::of(vol);
    let (_, last) = traj.node_range(traj.t0(), 2.0f64.min(traj.t1()))?;
    let mut tally = Tally::new("exponential_bounds");
    let mut ops = OperatorCache::new(schedule);
    let mut inners = vec![T::zero(); nl.modes()];
    let mut qv = 0.0;
    for m in 0..=last {
        let t = traj.time(m);
        let u = traj.snapshot(m).values();
        let denom = dot(u, u).as_f64() * vol + 1.0;
        let energy = ops.at(t)?.dirichlet_form_raw(u, u).as_f64();
        let (mut fu, mut gg) = (T::zero(), T::zero());
        for (j, &v) in u.iter().enumerate() {
            fu += nl.drift_at(j, v) * v;
            gg += nl.noise_sq_at(j, v);
        }
        let f_val = (-energy + (fu.as_f64() + gg.as_f64()) * vol) / denom;
        tally.leq(f_val, 4.0 * lam2, || json!({ "t": t, "what": "F" }));
        tally.leq(qv, 2.0 * lam2, || json!({ "t": t, "what": "<G>" }));
        nl.noise_inners(u, u, tv, &mut inners);
        qv += inners.iter().map(|c| (c.as_f64() / denom).powi(2)).sum::<f64>() * traj.dt();
    }
    Ok(tally.finish())
}

/// Exponents `(r₁, r₂)` of the interpolation norm `‖·‖_{r₁,r₂}` and the Sobolev exponent `q`.
fn interpolation_exponents(n: usize) -> Result<(f64, f64, f64)> {
    if n != 3 {
        return Err(SpdeError::UnsupportedDimension(
            n,
            "the interpolation check needs the finite Sobolev exponent 2n/(n−2), available for n = 3 only".into(),
        ));
    }
    let nf = n as f64;
    Ok((4.0 * (nf + 1.0) / nf, 2.0 * (nf + 1.0) / nf, 2.0 * nf / (nf - 2.0)))
}

/// `‖u‖²_{16/3, 8/3, I} ≤ sup_{t∈I} ‖u(t)‖₂² + ∫_I ‖u(t)‖₆² dt` with factor `1 + 1e−8`.
pub fn check_interpolation<T: Real>(traj: &Trajectory<T>, interval: (f64, f64)) -> Result<CheckResult> {
    let (r1, r2, q) = interpolation_exponents(traj.grid().dim())?;
    let (i0, i1) = traj.node_range(interval.0, interval.1)?;
    let mut sup = 0.0f64;
    let mut l2s = Vec::with_capacity(i1 - i0 + 1);
    let mut lqs = Vec::with_capacity(i1 - i0 + 1);
    let mut lrs = Vec::with_capacity(i1 - i0 + 1);
    for f in &traj.snapshots()[i0..=i1] {
        let l2 = f.lp_norm(2.0)?.as_f64();
        sup = sup.max(l2 * l2);
        l2s.push(l2);
        lqs.push(f.lp_norm(q)?.as_f64().powi(2));
        lrs.push(f.lp_norm(r2)?.as_f64());
    }
    let lhs = crate::trajectory::time_lp_norm(&lrs, traj.dt(), r1).powi(2);
    let rhs = (sup + crate::trajectory::trapezoid(&lqs, traj.dt())) * (1.0 + 1e-8);
    let mut tally = Tally::new("interpolation");
    tally.leq(lhs, rhs, || json!({ "lhs": lhs, "rhs": rhs }));
    Ok(tally.finish())
}

/// Discrete Itô balance for `‖u_{k,a}‖₂²` over `I_k`: the telescoped left side minus
/// `Σ [−dt⟨A∇w^{m+1},∇(w^{m+1}+w^m)⟩ + 2⟨g_i(u^m),w^m⟩ΔWⁱ + dt∫(|g(u^m)|² + 2w^m f(u^m))1_{w^m>0}]`
/// with `w = u_{k,a}`. Zero up to the solver tolerance for deterministic,
/// untruncated runs; otherwise of order `dt^{1/2}`.
pub fn ito_energy_balance<T: Real>(
    traj: &Trajectory<T>,
    schedule: &CoefficientSchedule<T>,
    nl: &Nonlinearity<T>,
    path: &NoisePath<T>,
    k: usize,
    a: f64,
) -> Result<WeakResidual> {
    let (s, e) = level_interval(k);
    let (i0, i1) = traj.node_range(s, e)?;
    path.ensure_compatible(traj.time(i0), traj.time(i1), traj.dt())?;
    let offset = path.step_at(traj.time(i0))?;
    let h = T::of(level_height(k, a));
    let vol = traj.grid().cell_volume();
    let dt = traj.dt();
    let mut ops = OperatorCache::new(schedule);
    let trunc = |m: usize| -> Vec<T> { traj.snapshot(m).values().iter().map(|&v| (v - h).max(T::zero())).collect() };
    let mut inners = vec![T::zero(); nl.modes()];
    let mut dw = vec![T::zero(); nl.modes()];
    let mut w = trunc(i0);
    let start = dot(&w, &w).as_f64() * vol;
    let mut end = start;
    let mut rhs = 0.0;
    let mut scale = start.abs();
    for m in i0..i1 {
        let u = traj.snapshot(m).values();
        let next = trunc(m + 1);
        let sum: Vec<T> = next.iter().zip(&w).map(|(&x, &y)| x + y).collect();
        let diffusion = -dt * ops.at(traj.time(m))?.dirichlet_form_raw(&next, &sum).as_f64();
        nl.noise_inners(u, &w, T::of(vol), &mut inners);
        path.increments_at(offset + m - i0, &mut dw);
        let noise: f64 = 2.0 * inners.iter().zip(&dw).map(|(&c, &d)| c.as_f64() * d.as_f64()).sum::<f64>();
        let mut corr = T::zero();
        for (j, (&uj, &wj)) in u.iter().zip(&w).enumerate() {
            if wj > T::zero() {
                corr += nl.noise_sq_at(j, uj) + (T::one() + T::one()) * wj * nl.drift_at(j, uj);
            }
        }
        let corr = dt * corr.as_f64() * vol;
        rhs += diffusion + noise + corr;
        scale += diffusion.abs() + noise.abs() + corr.abs();
        w = next;
        end = dot(&w, &w).as_f64() * vol;
    }
    scale += end.abs();
    Ok(WeakResidual { residual: end - start - rhs, scale })
}

/// Root-mean-square relative Itô residuals per time step, coarsest first; each
/// halving of `dt` must shrink the residual by at least 1.3.
pub fn check_ito_energy(levels: &[(f64, Vec<WeakResidual>)]) -> CheckResult {
    const RATIO: f64 = 1.3;
    let rms: Vec<f64> = levels.iter().map(|(_, rs)| (rs.iter().map(|r| r.relative().powi(2)).sum::<f64>() / rs.len().max(1) as f64).sqrt()).collect();
    let ratios: Vec<f64> = rms.windows(2).map(|w| w[0] / w[1]).collect();
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = rms.iter().all(|r| r.is_finite()) && ratios.iter().all(|&r| r >= RATIO || r.is_nan() && rms.iter().all(|&x| x == 0.0));
    CheckResult {
        name: "ito_energy".into(),
        mode: CheckMode::Fitted,
        pass,
        margin: worst,
        details: levels
            .iter()
            .zip(&rms)
            .map(|((dt, rs), r)| json!({ "dt": dt, "paths": rs.len(), "rms_relative_residual": json_number(*r) }))
            .collect(),
    }
}

/// Exponents `(e₁, e₂)` in `U_k ≤ (C^k/a^{e₁})(U_{k−1} + X*_{k−1})U_{k−1}^{e₂}`:
/// `(2/(n+1), 1/(n+1))`, or `(2μ, μ)` in two dimensions.
pub fn iteration_exponents(dim: usize, mu: f64) -> Result<(f64, f64)> {
    if dim == 2 {
        if !(mu > 0.0 && mu < 1.0 / 3.0) {
            return Err(SpdeError::InvalidArgument(format!("mu = {mu} must lie in (0, 1/3)")));
        }
        Ok((2.0 * mu, mu))
    } else {
        let e = 1.0 / (dim as f64 + 1.0);
        Ok((2.0 * e, e))
    }
}

/// Smallest `c` with `U_k ≤ (c^k/a^{e₁})(U_{k−1}+X*_{k−1})U_{k−1}^{e₂}` over
/// all `(a, k ≥ 1)` rows; 0 when every instance is vacuous.
pub fn iteration_constant(rows: &[LevelDiagnostics], dim: usize, mu: f64) -> Result<f64> {
    let (e1, e2) = iteration_exponents(dim, mu)?;
    let mut best = 0.0f64;
    for row in rows.iter().filter(|r| r.k >= 1) {
        let Some(prev) = rows.iter().find(|r| r.a == row.a && r.k + 1 == row.k) else {
            continue;
        };
        if row.energy == 0.0 {
            continue;
        }
        if prev.energy == 0.0 {
            return Err(SpdeError::MonotonicityViolation { k: row.k, a: row.a });
        }
        let ratio = row.energy * row.a.powf(e1) / ((prev.energy + prev.x_star) * prev.energy.powf(e2));
        best = best.max(ratio.powf(1.0 / row.k as f64));
    }
    Ok(best)
}

/// Smallest `C` with `qv_k ≤ C^k U_k²` over all rows with `k ≥ 1`.
pub fn qv_constant(rows: &[LevelDiagnostics]) -> f64 {
    rows.iter().filter(|r| r.k >= 1 && r.qv > 0.0).fold(0.0, |best: f64, r| {
        if r.energy == 0.0 {
            f64::INFINITY
        } else {
            best.max((r.qv / (r.energy * r.energy)).powf(1.0 / r.k as f64))
        }
    })
}

/// Fitted constant of an ensemble: the largest per-path constant.
pub fn ensemble_constant(per_path: &[f64]) -> f64 {
    per_path.iter().copied().fold(0.0, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
}

/// Stability clause for fitted constants: every ensemble constant is finite and
/// the largest is less than ten times the smallest.
pub fn check_fitted_stability(name: &str, ensembles: &[(String, Vec<f64>)]) -> CheckResult {
    let constants: Vec<f64> = ensembles.iter().map(|(_, c)| ensemble_constant(c)).collect();
    let finite = !constants.is_empty() && constants.iter().all(|c| c.is_finite());
    let hi = constants.iter().copied().fold(0.0, f64::max);
    let lo = constants.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if hi == 0.0 { 1.0 } else { hi / lo };
    CheckResult {
        name: name.to_string(),
        mode: CheckMode::Fitted,
        pass: finite && spread < STABILITY_FACTOR,
        margin: hi,
        details: ensembles
            .iter()
            .zip(&constants)
            .map(|((label, per_path), c)| {
                json!({
                    "ensemble": label,
                    "paths": per_path.len(),
                    "constant": json_number(*c),
                    "median_path_constant": json_number(median(per_path)),
                })
            })
            .chain(std::iter::once(json!({ "spread": json_number(spread) })))
            .collect(),
    }
}

/// Brownian reflection experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionParams {
    pub horizon: f64,
    pub b: f64,
    pub a_grid: Vec<f64>,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for ReflectionParams {
    fn default() -> Self {
        Self { horizon: 1.0, b: 1.0, a_grid: vec![1.0, 1.5, 2.0, 3.0], paths: 100_000, dt: 1e-4, seed: 31 }
    }
}

/// `sup_{0≤s≤t≤T} (W_t − W_s)` for each path, path `i` on its own stream.
pub fn brownian_drawups(params: &ReflectionParams) -> Result<Vec<f64>> {
    let steps = crate::trajectory::step_count(0.0, params.horizon, params.dt)?;
    let sd = params.dt.sqrt();
    Ok((0..params.paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamKey::new(params.seed, i, StreamRole::Reflection).stream(0);
            let (mut w, mut low, mut best) = (0.0f64, 0.0f64, 0.0f64);
            for _ in 0..steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                w += sd * z;
                low = low.min(w);
                best = best.max(w - low);
            }
            best
        })
        .collect())
}

/// `P{sup (M_t − M_s) ≥ a, ⟨M⟩_T ≤ b} ≤ e^{−a²/4b}` for standard Brownian `M`, whose
/// quadratic variation is exactly `T`.
pub fn check_reflection_bound(params: &ReflectionParams) -> Result<CheckResult> {
    if !(params.b > 0.0) || params.paths == 0 {
        return Err(SpdeError::InvalidArgument("reflection check needs b > 0 and at least one path".into()));
    }
    let drawups = brownian_drawups(params)?;
    let qv_event = params.horizon <= params.b;
    let n = drawups.len();
    let mut margin = f64::INFINITY;
    let mut details = Vec::new();
    for &a in &params.a_grid {
        let hits = if qv_event { drawups.iter().filter(|&&d| d >= a).count() } else { 0 };
        let freq = hits as f64 / n as f64;
        let sigma = binomial_std_err(freq, n);
        let bound = (-a * a / (4.0 * params.b)).exp();
        let gap = bound + SIGMAS * sigma - freq;
        margin = margin.min(gap);
        details.push(json!({ "a": a, "frequency": freq, "bound": bound, "std_err": sigma, "holds": gap >= 0.0 }));
    }
    Ok(CheckResult { name: "reflection_bound".into(), mode: CheckMode::MonteCarlo, pass: margin >= 0.0, margin, details })
}

/// Per-path inputs of the tail check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTail {
    /// `‖u⁺‖_{∞,[1,2]}`.
    pub sup_plus: f64,
    /// `‖u⁺‖_{4,2,[0,2]}`.
    pub norm_plus: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub a: f64,
    pub m: f64,
    pub paths: usize,
    pub frequency: f64,
    pub bound: f64,
    pub std_err: f64,
    pub holds: bool,
}

/// Joint frequency of `{sup u⁺ > a, M‖u⁺‖_{4,2} ≤ a}` against `e^{−M^{1/(n+1)}}`, one row per `(a, M)`.
pub fn tail_table(paths: &[PathTail], a_grid: &[f64], m_grid: &[f64], dim: usize) -> Vec<TailRow> {
    let n = paths.len();
    let mut rows = Vec::with_capacity(a_grid.len() * m_grid.len());
    for &a in a_grid {
        for &m in m_grid {
            let hits = paths.iter().filter(|p| p.sup_plus > a && m * p.norm_plus <= a).count();
            let frequency = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
            let std_err = if n == 0 { 0.0 } else { binomial_std_err(frequency, n) };
            let bound = (-m.powf(1.0 / (dim as f64 + 1.0))).exp();
            rows.push(TailRow { a, m, paths: n, frequency, bound, std_err, holds: frequency <= bound + SIGMAS * std_err });
        }
    }
    rows
}

/// Smallest `M` of the grid from which the bound holds for every larger `M`.
pub fn tail_onset(rows: &[TailRow], a: f64) -> Option<f64> {
    let mut own: Vec<&TailRow> = rows.iter().filter(|r| r.a == a).collect();
    own.sort_by(|x, y| x.m.total_cmp(&y.m));
    let mut onset = None;
    for r in own.iter().rev() {
        if !r.holds {
            break;
        }
        onset = Some(r.m);
    }
    onset
}

/// Onset table over nested ensembles of increasing size: every onset must be
/// finite and must not grow with the ensemble.
pub fn check_tail(ensembles: &[&[PathTail]], a_grid: &[f64], m_grid: &[f64], dim: usize, data: &DataNorms) -> Result<CheckResult> {
    data.ensure_unit_data()?;
    let mut pass = !ensembles.is_empty();
    let mut details = Vec::new();
    let mut margin = f64::INFINITY;
    for &a in a_grid {
        let onsets: Vec<Option<f64>> = ensembles.iter().map(|e| tail_onset(&tail_table(e, &[a], m_grid, dim), a)).collect();
        let finite = onsets.iter().all(Option::is_some);
        let nonincreasing = onsets.windows(2).all(|w| matches!((w[0], w[1]), (Some(x), Some(y)) if y <= x));
        pass &= finite && nonincreasing;
        if let Some(Some(last)) = onsets.last() {
            margin = margin.min(*last);
        } else {
            margin = f64::INFINITY;
        }
        details.push(json!({
            "a": a,
            "ensemble_sizes": ensembles.iter().map(|e| e.len()).collect::<Vec<_>>(),
            "onset_m": onsets.iter().map(|o| o.map_or(json!("inf"), |m| json!(m))).collect::<Vec<_>>(),
        }));
    }
    if dim == 2 {
        details.push(json!({ "note": "two-dimensional runs: onset semantics only, the exponent is not asserted" }));
    }
    Ok(CheckResult { name: "tail".into(), mode: CheckMode::MonteCarlo, pass, margin, details })
}

/// Per-path inputs of the moment check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMoments {
    /// `(p, ∫₀² ‖u(t)‖₂^p dt)`.
    pub time_integrals: Vec<(f64, f64)>,
    /// `‖u‖_{∞,[1,2]}`.
    pub sup_abs: f64,
}

#[derive(Clone, Debug)]
pub struct ScaledEnsemble<'a> {
    pub scale: f64,
    pub data: DataNorms,
    pub paths: &'a [PathMoments],
}

/// `R(s) = (E∫‖u‖₂^p + E‖u‖^p_∞) / (‖u₀‖₂ + ‖K‖₂ + ‖K‖_∞)^p` per data scale;
/// passes when every ratio is finite and they agree within a factor of ten.
pub fn check_moment(ensembles: &[ScaledEnsemble<'_>], p: f64) -> CheckResult {
    let mut ratios = Vec::new();
    let mut details = Vec::new();
    for e in ensembles {
        let integral = mean(&e.paths.iter().map(|q| q.time_integrals.iter().find(|x| x.0 == p).map_or(f64::NAN, |x| x.1)).collect::<Vec<_>>());
        let sup = mean(&e.paths.iter().map(|q| q.sup_abs.powf(p)).collect::<Vec<_>>());
        let lhs = integral + sup;
        let data = e.data.total().powf(p);
        let r = if lhs == 0.0 {
            0.0
        } else if data == 0.0 {
            f64::INFINITY
        } else {
            lhs / data
        };
        ratios.push(r);
        details.push(json!({ "scale": e.scale, "p": p, "paths": e.paths.len(), "lhs": json_number(lhs), "data": data, "ratio": json_number(r) }));
    }
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if hi == 0.0 { 1.0 } else { hi / lo };
    CheckResult {
        name: format!("moment_p{p}"),
        mode: CheckMode::Fitted,
        pass: !ratios.is_empty() && ratios.iter().all(|r| r.is_finite()) && spread < STABILITY_FACTOR,
        margin: hi,
        details,
    }
}

/// Per-path Hölder data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathHolder {
    /// Fitted exponent, `None` for constant paths.
    pub alpha: Option<f64>,
    pub std_err: Option<f64>,
    pub modulus: Vec<ScaleIncrement>,
    /// `‖u‖_{∞,[1,2]}`.
    pub sup_abs: f64,
    /// Exponents of the companion parts `v` and `φ`.
    pub v_alpha: Option<f64>,
    pub phi_alpha: Option<f64>,
}

/// Median exponent of the non-degenerate paths.
pub fn median_alpha(paths: &[PathHolder]) -> f64 {
    median(&paths.iter().filter_map(|p| p.alpha).collect::<Vec<_>>())
}

/// `‖u‖_{C^α} = ‖u‖_∞ + [u]_α` on the window.
pub fn holder_norm(path: &PathHolder, alpha: f64) -> f64 {
    path.sup_abs + seminorm_from_modulus(&path.modulus, alpha)
}

/// Median exponent positive and stable within 0.1 between resolutions,
/// finite `p`-th moments of the `C^α̂` norm, and finite split exponents.
pub fn check_holder_moment(coarse: &[PathHolder], fine: Option<&[PathHolder]>, p_list: &[f64]) -> CheckResult {
    let alpha = median_alpha(coarse);
    let alpha_fine = fine.map(median_alpha);
    let shift = alpha_fine.map(|f| (f - alpha).abs());
    let mut pass = alpha > 0.0 && shift.is_none_or(|s| s <= 0.1);
    let used: Vec<&PathHolder> = coarse.iter().filter(|p| p.alpha.is_some()).collect();
    let mut moments = Vec::new();
    for &p in p_list {
        let m = mean(&used.iter().map(|q| holder_norm(q, alpha).powf(p)).collect::<Vec<_>>());
        pass &= m.is_finite();
        moments.push(json!({ "p": p, "moment": json_number(m) }));
    }
    let split_values: Vec<f64> = coarse.iter().flat_map(|p| [p.v_alpha, p.phi_alpha]).flatten().collect();
    pass &= split_values.iter().all(|x| x.is_finite());
    let v_med = median(&coarse.iter().filter_map(|p| p.v_alpha).collect::<Vec<_>>());
    let phi_med = median(&coarse.iter().filter_map(|p| p.phi_alpha).collect::<Vec<_>>());
    CheckResult {
        name: "holder_moment".into(),
        mode: CheckMode::Fitted,
        pass,
        margin: alpha,
        details: vec![json!({
            "alpha_median": json_number(alpha),
            "alpha_median_refined": alpha_fine.map(json_number),
            "refinement_shift": shift.map(json_number),
            "paths": coarse.len(),
            "degenerate_excluded": coarse.len() - used.len(),
            "moments": moments,
            "v_alpha_median": json_number(v_med),
            "phi_alpha_median": json_number(phi_med),
        })],
    }
}
