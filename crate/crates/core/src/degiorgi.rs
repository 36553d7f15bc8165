//! De Giorgi level-set quantities computed from a discrete trajectory.
//!
//! For a level base `a ≥ 1` and iteration index `k` the time window is
//! `I_k = [1 − 2^{−k}, 2]` and the truncation is
//! `u_{k,a} = (u − a(1 − 2^{−k}))⁺`. The level energy is
//! `U_{k,a} = ‖u_{k,a}‖²_{4,2,I_k}` and the martingale of index `k` is
//! `X_t = ∫ ⟨g_i(u), u_{k+1,a}⟩ dwⁱ`, observed on `I_k`.

use serde::{Deserialize, Serialize};

use crate::coefficients::Nonlinearity;
use crate::error::{Result, SpdeError};
use crate::grid::{Field, Grid};
use crate::noise::NoisePath;
use crate::scalar::Real;
use crate::trajectory::{time_lp_norm, trapezoid_weight, Trajectory};

/// End of the working window.
pub const WINDOW_END: f64 = 2.0;

/// `I_k = [1 − 2^{−k}, 2]`.
pub fn level_interval(k: usize) -> (f64, f64) {
    (1.0 - 0.5f64.powi(k as i32), WINDOW_END)
}

/// Truncation height `a(1 − 2^{−k})`.
pub fn level_height(k: usize, a: f64) -> f64 {
    a * (1.0 - 0.5f64.powi(k as i32))
}

fn check_level(a: f64) -> Result<()> {
    if !(a >= 1.0 && a.is_finite()) {
        return Err(SpdeError::InvalidArgument(format!("level base a = {a} must be at least 1")));
    }
    Ok(())
}

#[inline]
fn truncate_raw<T: Real>(u: &[T], height: T, out: &mut Vec<T>) {
    out.clear();
    out.extend(u.iter().map(|&v| (v - height).max(T::zero())));
}

/// `u_{k,a} = (u − a(1 − 2^{−k}))⁺`.
pub fn truncate<T: Real>(f: &Field<T>, k: usize, a: f64) -> Result<Field<T>> {
    check_level(a)?;
    let h = T::of(level_height(k, a));
    Ok(f.map(|v| (v - h).max(T::zero())))
}

/// `‖u_{k,a}(t)‖₂` for each node of `I_k`, with the node range.
fn truncated_l2_norms<T: Real>(traj: &Trajectory<T>, k: usize, a: f64) -> Result<(usize, Vec<T>)> {
    check_level(a)?;
    traj.ensure_covers(0.0, WINDOW_END)?;
    let (s, e) = level_interval(k);
    let (i0, i1) = traj.node_range(s, e)?;
    let h = T::of(level_height(k, a));
    let vol = T::of(traj.grid().cell_volume());
    let norms = traj.snapshots()[i0..=i1]
        .iter()
        .map(|f| {
            let s: T = f
                .values()
                .iter()
                .map(|&v| {
                    let w = (v - h).max(T::zero());
                    w * w
                })
                .sum();
            (s * vol).sqrt()
        })
        .collect();
    Ok((i0, norms))
}

/// `U_{k,a} = ‖u_{k,a}‖²_{4,2,I_k}`.
pub fn level_energy<T: Real>(traj: &Trajectory<T>, k: usize, a: f64) -> Result<T> {
    let (_, norms) = truncated_l2_norms(traj, k, a)?;
    Ok(time_lp_norm(&norms, traj.dt(), 4.0).powi(2))
}

/// `|{f > threshold}| = dxⁿ · #{nodes with f > threshold}`.
pub fn levelset_measure<T: Real>(f: &Field<T>, threshold: T) -> T {
    let count = f.values().iter().filter(|&&v| v > threshold).count();
    T::of(count as f64 * f.grid().cell_volume())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupKind {
    /// `max u⁺`
    Plus,
    /// `max |u|`
    Abs,
}

/// Space-time sup of `u⁺` or `|u|` over the nodes of `interval`.
pub fn sup_norm<T: Real>(traj: &Trajectory<T>, interval: (f64, f64), kind: SupKind) -> Result<T> {
    let (i0, i1) = traj.node_range(interval.0, interval.1)?;
    let mut m = T::zero();
    for f in &traj.snapshots()[i0..=i1] {
        f.ensure_finite()?;
        for &v in f.values() {
            m = m.max(match kind {
                SupKind::Plus => v,
                SupKind::Abs => v.abs(),
            });
        }
    }
    Ok(m)
}

/// `max_{s ≤ t} (x_t − x_s)` by a running minimum.
pub fn max_drawup<T: Real>(xs: &[T]) -> T {
    let mut best = T::zero();
    let mut low = match xs.first() {
        Some(&x) => x,
        None => return best,
    };
    for &x in xs {
        low = low.min(x);
        best = best.max(x - low);
    }
    best
}

/// Discrete martingale `X` of index `k` on `I_k` and its statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleStats {
    /// Times of the nodes of `I_k`.
    pub times: Vec<f64>,
    /// `X_t − X_{start}`, left-point Itô sums.
    pub path: Vec<f64>,
    /// `sup_{s ≤ t ∈ I_k} (X_t − X_s)`.
    pub x_star: f64,
    /// `Σ_m Σ_i ⟨g_i(u^m), u^m_{k+1,a}⟩² dt`.
    pub qv: f64,
}

/// Martingale of index `k`: integrand `⟨g_i(u), u_{k+1,a}⟩`, observed on `I_k`.
/// The same object appears as `X*_{k,a}` on the right side of the level-`k+1`
/// iteration and on the left of the quadratic-variation bound at `k`.
pub fn martingale_stats<T: Real>(traj: &Trajectory<T>, path: &NoisePath<T>, nl: &Nonlinearity<T>, k: usize, a: f64) -> Result<MartingaleStats> {
    check_level(a)?;
    traj.ensure_covers(0.0, WINDOW_END)?;
    stochastic_integral(traj, path, nl, level_height(k + 1, a), level_interval(k))
}

/// Left-point sums of `Σ_i ⟨g_i(u), (u − height)⁺⟩ dWⁱ` over the nodes of `interval`.
pub fn stochastic_integral<T: Real>(
    traj: &Trajectory<T>,
    path: &NoisePath<T>,
    nl: &Nonlinearity<T>,
    height: f64,
    interval: (f64, f64),
) -> Result<MartingaleStats> {
    let (i0, i1) = traj.node_range(interval.0, interval.1)?;
    path.ensure_compatible(traj.time(i0), traj.time(i1), traj.dt())?;
    let offset = path.step_at(traj.time(i0))?;
    let h = T::of(height);
    let vol = T::of(traj.grid().cell_volume());
    let dt = traj.dt();
    let mut inners = vec![T::zero(); nl.modes()];
    let mut dw = vec![T::zero(); nl.modes()];
    let mut w = Vec::new();
    let mut x = 0.0;
    let mut qv = 0.0;
    let mut xs = Vec::with_capacity(i1 - i0 + 1);
    xs.push(0.0);
    for m in i0..i1 {
        let u = traj.snapshot(m).values();
        truncate_raw(u, h, &mut w);
        if w.iter().any(|&v| v > T::zero()) {
            nl.noise_inners(u, &w, vol, &mut inners);
            path.increments_at(offset + m - i0, &mut dw);
            for (&c, &d) in inners.iter().zip(&dw) {
                let c = c.as_f64();
                x += c * d.as_f64();
                qv += c * c * dt;
            }
        }
        xs.push(x);
    }
    Ok(MartingaleStats { times: (i0..=i1).map(|m| traj.time(m)).collect(), x_star: max_drawup(&xs), path: xs, qv })
}

/// One `(a, k)` row of the level cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub a: f64,
    pub k: usize,
    /// `U_{k,a}`.
    pub energy: f64,
    /// `X*_{k,a}`.
    pub x_star: f64,
    /// `⟨X⟩_2 − ⟨X⟩_{1−2^{−k}}` of the index-`k` martingale.
    pub qv: f64,
    /// `(t, |{u_{k,a}(t) > 0}|)` at every `stride`-th node of `I_k`.
    pub levelset: Vec<(f64, f64)>,
}

/// All rows `k = 0..=k_max` for one level base `a`.
pub fn level_cascade<T: Real>(
    traj: &Trajectory<T>,
    path: &NoisePath<T>,
    nl: &Nonlinearity<T>,
    a: f64,
    k_max: usize,
    levelset_stride: usize,
) -> Result<Vec<LevelDiagnostics>> {
    let stride = levelset_stride.max(1);
    let mut rows = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let energy = level_energy(traj, k, a)?.as_f64();
        let mart = martingale_stats(traj, path, nl, k, a)?;
        let (s, e) = level_interval(k);
        let (i0, i1) = traj.node_range(s, e)?;
        let h = T::of(level_height(k, a));
        let levelset = (i0..=i1)
            .step_by(stride)
            .map(|m| {
                let f = traj.snapshot(m);
                let count = f.values().iter().filter(|&&v| v > h).count();
                (traj.time(m), count as f64 * f.grid().cell_volume())
            })
            .collect();
        rows.push(LevelDiagnostics { a, k, energy, x_star: mart.x_star, qv: mart.qv, levelset });
    }
    Ok(rows)
}

/// First `k` violating `E_k = {U_{k,a} ≤ (a/M)² γ^k}` among the rows of one level base,
/// `None` if every row satisfies it.
pub fn first_ek_violation(rows: &[LevelDiagnostics], a: f64, m: f64, gamma: f64) -> Option<usize> {
    let mut own: Vec<&LevelDiagnostics> = rows.iter().filter(|r| r.a == a).collect();
    own.sort_by_key(|r| r.k);
    own.into_iter().find(|r| r.energy > (a / m).powi(2) * gamma.powi(r.k as i32)).map(|r| r.k)
}

/// Per-snapshot `‖u_{k,a}(t)‖₂²` on the nodes of `[start, end]`.
pub fn truncated_energy_series<T: Real>(traj: &Trajectory<T>, k: usize, a: f64, interval: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    check_level(a)?;
    let (i0, i1) = traj.node_range(interval.0, interval.1)?;
    let h = T::of(level_height(k, a));
    let vol = traj.grid().cell_volume();
    Ok((i0..=i1)
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
            (traj.time(m), s.as_f64() * vol)
        })
        .collect())
}

/// Largest increment at one parabolic scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleIncrement {
    /// Spatial offset `h·dx`.
    pub rho: f64,
    /// `max |u(t, x + h e) − u(t, x)|` over nodes, axes and window times.
    pub spatial: f64,
    /// Time lag `ℓ·dt ≈ ρ²` actually used (0 if below one step or beyond the window).
    pub lag: f64,
    /// `max |u(t + lag, x) − u(t, x)|`.
    pub temporal: f64,
}

impl ScaleIncrement {
    pub fn combined(&self) -> f64 {
        self.spatial.max(self.temporal)
    }
}

fn dyadic_offsets(grid: &Grid) -> Vec<usize> {
    let mut v = Vec::new();
    let mut h = 1;
    while 4 * h <= grid.points() {
        v.push(h);
        h *= 2;
    }
    v
}

/// Space and time increment maxima at the dyadic scales `ρ = dx, 2dx, …, L/4`.
pub fn increment_modulus<T: Real>(traj: &Trajectory<T>, interval: (f64, f64)) -> Result<Vec<ScaleIncrement>> {
    let (i0, i1) = traj.node_range(interval.0, interval.1)?;
    let g = *traj.grid();
    let dx = g.dx();
    let snaps = &traj.snapshots()[i0..=i1];
    let mut out = Vec::new();
    for h in dyadic_offsets(&g) {
        let mut spatial = T::zero();
        for f in snaps {
            let v = f.values();
            for axis in 0..g.dim() {
                for j in 0..g.len() {
                    spatial = spatial.max((v[g.offset(j, axis, h)] - v[j]).abs());
                }
            }
        }
        let rho = h as f64 * dx;
        let lag_steps = (rho * rho / traj.dt()).round() as usize;
        let mut temporal = T::zero();
        let lag = if lag_steps >= 1 && lag_steps <= i1 - i0 {
            for m in 0..snaps.len() - lag_steps {
                for (&a, &b) in snaps[m + lag_steps].values().iter().zip(snaps[m].values()) {
                    temporal = temporal.max((a - b).abs());
                }
            }
            lag_steps as f64 * traj.dt()
        } else {
            0.0
        };
        out.push(ScaleIncrement { rho, spatial: spatial.as_f64(), lag, temporal: temporal.as_f64() });
    }
    Ok(out)
}

/// Sampled parabolic Hölder seminorm: the largest `|u(t,x) − u(s,y)| / ρ^α`
/// over the dyadic pairs of [`increment_modulus`], `ρ = max(|x − y|, |t − s|^{1/2})`.
pub fn holder_seminorm<T: Real>(traj: &Trajectory<T>, alpha: f64, interval: (f64, f64)) -> Result<f64> {
    Ok(seminorm_from_modulus(&increment_modulus(traj, interval)?, alpha))
}

pub fn seminorm_from_modulus(modulus: &[ScaleIncrement], alpha: f64) -> f64 {
    modulus.iter().fold(0.0, |m: f64, s| {
        let mut m = m.max(s.spatial / s.rho.powf(alpha));
        if s.lag > 0.0 {
            m = m.max(s.temporal / s.lag.sqrt().powf(alpha));
        }
        m
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    /// Fitted exponent, `NaN` when degenerate.
    pub alpha: f64,
    /// Standard error of the fitted slope.
    pub std_err: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// No increment above round-off (constant data).
    pub degenerate: bool,
    pub modulus: Vec<ScaleIncrement>,
}

pub const MIN_SCALES: usize = 4;

/// Least-squares slope of `log(max increment)` against `log ρ` over the dyadic scales.
pub fn estimate_alpha<T: Real>(traj: &Trajectory<T>, interval: (f64, f64)) -> Result<AlphaEstimate> {
    let modulus = increment_modulus(traj, interval)?;
    if modulus.len() < MIN_SCALES {
        return Err(SpdeError::TooFewScales { available: modulus.len(), required: MIN_SCALES });
    }
    let level = sup_norm(traj, interval, SupKind::Abs)?.as_f64();
    let floor = 1e-13 * (1.0 + level);
    let pts: Vec<(f64, f64)> = modulus.iter().filter(|s| s.combined() > floor).map(|s| (s.rho.ln(), s.combined().ln())).collect();
    if pts.len() < MIN_SCALES {
        return Ok(AlphaEstimate { alpha: f64::NAN, std_err: f64::NAN, intercept: f64::NAN, r_squared: f64::NAN, degenerate: true, modulus });
    }
    let fit = crate::stats::linear_fit(&pts);
    Ok(AlphaEstimate { alpha: fit.slope, std_err: fit.slope_std_err, intercept: fit.intercept, r_squared: fit.r_squared, degenerate: false, modulus })
}

/// Trapezoid weights of the nodes of `I_k` (exposed for the mean-value check).
pub fn window_weights(count: usize, dt: f64) -> Vec<f64> {
    (0..count).map(|m| trapezoid_weight(m, count, dt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamKey, StreamRole};

    fn line(n: usize) -> Grid {
        Grid::new(1, 1.0, n).unwrap()
    }

    fn constant_traj(c: f64, dt: f64) -> Trajectory<f64> {
        let g = line(16);
        Trajectory::from_fn(g, 0.0, 2.0, dt, |_| Field::constant(g, c)).unwrap()
    }

    #[test]
    fn truncation_arithmetic() {
        let g = line(8);
        let u = Field::<f64>::constant(g, 3.0);
        assert!(truncate(&u, 1, 2.0).unwrap().values().iter().all(|&v| v == 2.0));
        let mixed = Field::<f64>::from_fn(g, |x| x[0] - 0.5);
        assert_eq!(truncate(&mixed, 0, 7.0).unwrap(), mixed.positive_part());
        assert!(truncate(&u, 1, 0.5).is_err());
    }

    #[test]
    fn constant_level_energy() {
        let u = constant_traj(3.0, 1e-3);
        let got = level_energy(&u, 1, 2.0).unwrap();
        assert!((got - 24f64.sqrt()).abs() < 1e-12);
        assert_eq!(level_energy(&u, 3, 4.0).unwrap(), 0.0);
        assert!(matches!(
            level_energy(&Trajectory::from_fn(line(4), 0.0, 1.0, 0.1, |_| Field::<f64>::zeros(line(4))).unwrap(), 0, 1.0),
            Err(SpdeError::SpanTooShort { .. })
        ));
    }

    #[test]
    fn levelset_measure_counts() {
        let g = line(16);
        assert_eq!(levelset_measure(&Field::<f64>::zeros(g), 0.0), 0.0);
        assert_eq!(levelset_measure(&Field::<f64>::constant(g, 1.0), 0.0), 1.0);
        let half = Field::<f64>::from_fn(g, |x| if x[0] < 0.5 { 1.0 } else { -1.0 });
        assert_eq!(levelset_measure(&half, 0.0), 0.5);
    }

    #[test]
    fn drawup_matches_pair_scan() {
        let xs = [0.0, 1.0, -2.0, 0.5, 3.0, -1.0, 2.5, 2.0];
        let mut brute: f64 = 0.0;
        for t in 0..xs.len() {
            for s in 0..=t {
                brute = brute.max(xs[t] - xs[s]);
            }
        }
        assert_eq!(max_drawup(&xs), brute);
        assert_eq!(max_drawup::<f64>(&[]), 0.0);
        assert_eq!(max_drawup(&[3.0, 2.0, 1.0]), 0.0);
    }

    #[test]
    fn constant_integrand_quadratic_variation() {
        // One mode with g₁ ≡ 1 and u ≡ 2: ⟨g₁, u_{k+1,1}⟩ = 2 − (1 − 2^{−k−1}).
        let dt = 1e-3;
        let u = constant_traj(2.0, dt);
        let g = *u.grid();
        let nl = Nonlinearity::new(vec![Field::zeros(g), Field::constant(g, 1.0)], vec![0.0, 0.0], None).unwrap();
        let path = NoisePath::generate(1, 0.0, 2.0, dt, StreamKey::new(1, 0, StreamRole::Noise)).unwrap();
        for k in 0..4 {
            let c = 2.0 - level_height(k + 1, 1.0);
            let st = martingale_stats(&u, &path, &nl, k, 1.0).unwrap();
            let len = 2.0 - level_interval(k).0;
            assert!((st.qv - c * c * len).abs() < 1e-9, "k = {k}");
            assert!(st.x_star >= 0.0);
            // X is c times the Brownian increment since the window start.
            let w = path.brownian(1);
            let start = path.step_at(st.times[0]).unwrap();
            let end = *st.path.last().unwrap();
            assert!((end - c * (w[2000] - w[start])).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_noise_gives_zero_martingale() {
        let u = constant_traj(5.0, 1e-2);
        let g = *u.grid();
        let nl = Nonlinearity::zero(g, 3);
        let path = NoisePath::generate(3, 0.0, 2.0, 1e-2, StreamKey::new(1, 0, StreamRole::Noise)).unwrap();
        let st = martingale_stats(&u, &path, &nl, 2, 1.0).unwrap();
        assert_eq!((st.x_star, st.qv), (0.0, 0.0));
    }

    #[test]
    fn ek_cascade_first_violation() {
        let row = |k: usize, energy: f64| LevelDiagnostics { a: 2.0, k, energy, x_star: 0.0, qv: 0.0, levelset: vec![] };
        // (a/M)² = 1/4 with M = 4; thresholds 0.25, 0.125, 0.0625 for γ = 1/2.
        let rows = [row(0, 0.2), row(1, 0.1), row(2, 0.07)];
        assert_eq!(first_ek_violation(&rows, 2.0, 4.0, 0.5), Some(2));
        assert_eq!(first_ek_violation(&rows[..2], 2.0, 4.0, 0.5), None);
    }

    #[test]
    fn sup_norms() {
        let u = constant_traj(-1.5, 1e-2);
        assert_eq!(sup_norm(&u, (1.0, 2.0), SupKind::Plus).unwrap(), 0.0);
        assert_eq!(sup_norm(&u, (1.0, 2.0), SupKind::Abs).unwrap(), 1.5);
    }

    #[test]
    fn hat_function_is_one_lipschitz() {
        let g = line(128);
        let hat = Field::<f64>::from_fn(g, |x| 0.5 - (x[0] - 0.5).abs());
        let u = Trajectory::from_fn(g, 0.0, 2.0, 1e-2, |_| hat.clone()).unwrap();
        let s = holder_seminorm(&u, 1.0, (1.0, 2.0)).unwrap();
        assert!((s - 1.0).abs() <= g.dx(), "seminorm {s}");
        let est = estimate_alpha(&u, (1.0, 2.0)).unwrap();
        assert!(!est.degenerate);
        assert!((est.alpha - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_trajectory_is_degenerate() {
        let g = line(64);
        let u = Trajectory::from_fn(g, 0.0, 2.0, 1e-2, |_| Field::<f64>::constant(g, 2.0)).unwrap();
        assert_eq!(holder_seminorm(&u, 0.5, (1.0, 2.0)).unwrap(), 0.0);
        assert!(estimate_alpha(&u, (1.0, 2.0)).unwrap().degenerate);
        let coarse = Trajectory::from_fn(line(8), 0.0, 2.0, 1e-2, |_| Field::<f64>::constant(line(8), 2.0)).unwrap();
        assert!(matches!(estimate_alpha(&coarse, (1.0, 2.0)), Err(SpdeError::TooFewScales { .. })));
    }
}
