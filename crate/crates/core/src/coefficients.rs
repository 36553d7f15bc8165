//! Rough random diffusion coefficients, affine nonlinearities and their
//! structural validators (uniform ellipticity and linear growth).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpdeError};
use crate::grid::{dot, Field, Grid, MatrixField};
use crate::rng::StreamKey;
use crate::scalar::Real;

/// Space-time checkerboard model for `A(t, x; ω)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticitySpec {
    /// Ellipticity constant, entries are drawn from `[λ, 1/λ]`.
    pub lambda: f64,
    /// Coefficient refresh period.
    pub epoch_dt: f64,
    /// Patch edge length in nodes.
    pub cell: usize,
}

impl EllipticitySpec {
    pub fn validate(&self, grid: &Grid, dt: f64) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(SpdeError::InvalidArgument(format!("lambda = {} not in (0, 1]", self.lambda)));
        }
        if !(self.epoch_dt >= dt * (1.0 - 1e-12)) {
            return Err(SpdeError::InvalidArgument(format!("epoch_dt = {} is shorter than the time step {dt}", self.epoch_dt)));
        }
        if self.cell == 0 || !grid.points().is_multiple_of(self.cell) {
            return Err(SpdeError::InvalidArgument(format!("cell = {} does not divide N = {}", self.cell, grid.points())));
        }
        Ok(())
    }

    /// Epoch containing time `t`, i.e. `t ∈ [e·epoch_dt, (e+1)·epoch_dt)`.
    pub fn epoch_at(&self, t: f64) -> u64 {
        (t / self.epoch_dt + 1e-9).floor().max(0.0) as u64
    }
}

/// Draws the coefficient of `epoch`: every `cell`-sized patch gets independent
/// diagonal entries, uniform on `[λ, 1/λ]`. Depends on `(key, epoch)` only.
pub fn sample_coefficient<T: Real>(spec: &EllipticitySpec, grid: &Grid, key: &StreamKey, epoch: u64) -> Result<MatrixField<T>> {
    spec.validate(grid, 0.0)?;
    let dim = grid.dim();
    let patches_per_axis = grid.points() / spec.cell;
    let patch_count = patches_per_axis.pow(dim as u32);
    let (lo, hi) = (spec.lambda, 1.0 / spec.lambda);
    let mut rng = key.stream(epoch);
    let draws: Vec<f64> = (0..patch_count * dim).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let mut diag = Vec::with_capacity(grid.len() * dim);
    for j in 0..grid.len() {
        let patch = (0..dim).fold(0, |acc, axis| acc * patches_per_axis + grid.coord(j, axis) / spec.cell);
        for axis in 0..dim {
            diag.push(T::of(draws[patch * dim + axis]));
        }
    }
    MatrixField::new(*grid, diag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub pass: bool,
    pub worst_low: f64,
    pub worst_high: f64,
}

pub fn validate_ellipticity<T: Real>(a: &MatrixField<T>, lambda: f64) -> EllipticityReport {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in a.entries() {
        let e = e.as_f64();
        lo = lo.min(e);
        hi = hi.max(e);
    }
    let pass = lo >= lambda - 1e-12 && hi <= 1.0 / lambda + 1e-12;
    EllipticityReport { pass, worst_low: lo, worst_high: hi }
}

/// The coefficient used at each time: either fixed, or freshly sampled per epoch.
#[derive(Clone, Debug)]
pub enum CoefficientSchedule<T> {
    Fixed(MatrixField<T>),
    Sampled { spec: EllipticitySpec, grid: Grid, key: StreamKey },
}

impl<T: Real> CoefficientSchedule<T> {
    pub fn identity(grid: Grid) -> Self {
        Self::Fixed(MatrixField::identity(grid))
    }

    pub fn grid(&self) -> &Grid {
        match self {
            Self::Fixed(a) => a.grid(),
            Self::Sampled { grid, .. } => grid,
        }
    }

    pub fn epoch_at(&self, t: f64) -> u64 {
        match self {
            Self::Fixed(_) => 0,
            Self::Sampled { spec, .. } => spec.epoch_at(t),
        }
    }

    pub fn field(&self, epoch: u64) -> Result<MatrixField<T>> {
        match self {
            Self::Fixed(a) => Ok(a.clone()),
            Self::Sampled { spec, grid, key } => sample_coefficient(spec, grid, key, epoch),
        }
    }
}

/// Growth data `(K, Λ)`: `|f| + |g|_{ℓ²} ≤ K(x) + Λ|u|`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthData<T> {
    k: Field<T>,
    growth: f64,
}

impl<T: Real> GrowthData<T> {
    pub fn new(k: Field<T>, growth: f64) -> Result<Self> {
        k.ensure_finite()?;
        if k.values().iter().any(|&v| v < T::zero()) {
            return Err(SpdeError::InvalidArgument("K must be nonnegative".into()));
        }
        if !(growth >= 1.0 && growth.is_finite()) {
            return Err(SpdeError::InvalidArgument(format!("Lambda = {growth} must be at least 1")));
        }
        Ok(Self { k, growth })
    }

    /// Hat profile `κ·max(0, 1 − |x − c|/r)` around the box centre, scaled so
    /// that `‖K‖₂ + ‖K‖_∞ = budget`.
    pub fn bump(grid: Grid, budget: f64, radius: f64, growth: f64) -> Result<Self> {
        if !(budget >= 0.0 && radius > 0.0) {
            return Err(SpdeError::InvalidArgument(format!("bad K profile: budget {budget}, radius {radius}")));
        }
        let c = 0.5 * grid.length();
        let dim = grid.dim();
        let shape = Field::<f64>::from_fn(grid, |x| {
            let d2: f64 = x[..dim].iter().map(|xi| (xi - c).powi(2)).sum();
            (1.0 - d2.sqrt() / radius).max(0.0)
        });
        let norm = shape.lp_norm(2.0)? + shape.lp_norm(f64::INFINITY)?;
        let kappa = if norm > 0.0 { budget / norm } else { 0.0 };
        let k = Field::new(grid, shape.values().iter().map(|&v| T::of(kappa * v)).collect())?;
        Self::new(k, growth)
    }

    pub fn k(&self) -> &Field<T> {
        &self.k
    }

    /// `Λ`.
    pub fn growth(&self) -> f64 {
        self.growth
    }

    pub fn k_l2(&self) -> f64 {
        self.k.lp_norm(2.0).map(Real::as_f64).unwrap_or(f64::NAN)
    }

    pub fn k_inf(&self) -> f64 {
        self.k.max_abs().as_f64()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { k: self.k.scaled(T::of(s.abs())), growth: self.growth }
    }
}

/// Parameters of the affine family built from a [`GrowthData`] budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearityParams {
    /// Number of noise modes `m`.
    pub modes: usize,
    /// `κ₀ = share · K`.
    pub drift_kappa_share: f64,
    /// `(Σ_{i≥1} κ_i²)^{1/2} ≤ share · K`.
    pub noise_kappa_share: f64,
    /// `λ₀`, the linear drift coefficient.
    pub drift_lambda: f64,
    /// `ℓ²` norm of the noise coefficients `λ_i`.
    pub noise_lambda: f64,
    /// Mode weights decay like `i^{-decay}`.
    pub mode_decay: f64,
    /// Optional clipping level for the `u` dependence.
    #[serde(default)]
    pub clip: Option<f64>,
}

impl Default for NonlinearityParams {
    fn default() -> Self {
        Self { modes: 16, drift_kappa_share: 0.5, noise_kappa_share: 0.5, drift_lambda: -0.5, noise_lambda: 0.5, mode_decay: 1.0, clip: None }
    }
}

/// `f(x,u) = κ₀(x) + λ₀·clip(u)`, `g_i(x,u) = κ_i(x) + λ_i·clip(u)` for `i = 1..=m`.
#[derive(Clone, Debug)]
pub struct Nonlinearity<T> {
    kappa: Vec<Field<T>>,
    lambdas: Vec<T>,
    clip: Option<T>,
    // Per-node Σ κ_i², Σ λ_i κ_i over noise modes, and Σ λ_i².
    kk: Vec<T>,
    kl: Vec<T>,
    ll: T,
}

impl<T: Real> Nonlinearity<T> {
    /// `kappa[0]`/`lambdas[0]` describe the drift, the rest the noise modes.
    pub fn new(kappa: Vec<Field<T>>, lambdas: Vec<f64>, clip: Option<f64>) -> Result<Self> {
        if kappa.is_empty() || kappa.len() != lambdas.len() {
            return Err(SpdeError::InvalidArgument(format!(
                "need matching kappa ({}) and lambda ({}) lists including the drift",
                kappa.len(),
                lambdas.len()
            )));
        }
        let grid = *kappa[0].grid();
        for k in &kappa {
            grid.ensure_same(k.grid())?;
            k.ensure_finite()?;
        }
        if let Some(c) = clip {
            if !(c > 0.0) {
                return Err(SpdeError::InvalidArgument(format!("clip level {c} must be positive")));
            }
        }
        let lambdas: Vec<T> = lambdas.into_iter().map(T::of).collect();
        let mut kk = vec![T::zero(); grid.len()];
        let mut kl = vec![T::zero(); grid.len()];
        for (k, &l) in kappa.iter().zip(&lambdas).skip(1) {
            for (j, &v) in k.values().iter().enumerate() {
                kk[j] += v * v;
                kl[j] += l * v;
            }
        }
        let ll = lambdas[1..].iter().map(|&l| l * l).sum();
        Ok(Self { kappa, lambdas, clip: clip.map(T::of), kk, kl, ll })
    }

    pub fn zero(grid: Grid, modes: usize) -> Self {
        Self::new(vec![Field::zeros(grid); modes + 1], vec![0.0; modes + 1], None).expect("zero nonlinearity is valid")
    }

    /// Budget-saturating family: see [`NonlinearityParams`].
    pub fn from_params(growth: &GrowthData<T>, p: &NonlinearityParams) -> Result<Self> {
        if p.drift_kappa_share < 0.0 || p.noise_kappa_share < 0.0 || p.drift_kappa_share + p.noise_kappa_share > 1.0 + 1e-12 {
            return Err(SpdeError::InvalidArgument(format!("kappa shares {} + {} exceed the K budget", p.drift_kappa_share, p.noise_kappa_share)));
        }
        if p.noise_lambda < 0.0 || p.drift_lambda.abs() + p.noise_lambda > growth.growth() * (1.0 + 1e-12) {
            return Err(SpdeError::InvalidArgument(format!("|{}| + {} exceeds Lambda = {}", p.drift_lambda, p.noise_lambda, growth.growth())));
        }
        let k = growth.k();
        let grid = *k.grid();
        let raw: Vec<f64> = (1..=p.modes).map(|i| (i as f64).powf(-p.mode_decay)).collect();
        let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
        let weights: Vec<f64> = raw.iter().map(|w| if norm > 0.0 { w / norm } else { 0.0 }).collect();
        let tau_over_l = std::f64::consts::TAU / grid.length();
        let mut kappa = vec![k.scaled(T::of(p.drift_kappa_share))];
        let mut lambdas = vec![p.drift_lambda];
        for (i, w) in weights.iter().enumerate() {
            let amp = p.noise_kappa_share * w;
            let modulation = Field::<T>::from_fn(grid, |x| (tau_over_l * i as f64 * x[0]).cos());
            kappa.push(k.zip_map(&modulation, |kv, c| T::of(amp) * kv * c)?);
            lambdas.push(p.noise_lambda * w);
        }
        Self::new(kappa, lambdas, p.clip)
    }

    /// Number of noise modes `m`.
    pub fn modes(&self) -> usize {
        self.kappa.len() - 1
    }

    pub fn grid(&self) -> &Grid {
        self.kappa[0].grid()
    }

    pub fn kappa(&self, i: usize) -> &Field<T> {
        &self.kappa[i]
    }

    pub fn lambda(&self, i: usize) -> T {
        self.lambdas[i]
    }

    /// Same structure with all `κ_i` multiplied by `s`.
    pub fn scaled_data(&self, s: f64) -> Self {
        let kappa = self.kappa.iter().map(|k| k.scaled(T::of(s))).collect();
        let lambdas = self.lambdas.iter().map(|l| l.as_f64()).collect();
        Self::new(kappa, lambdas, self.clip.map(Real::as_f64)).expect("scaling preserves validity")
    }

    #[inline]
    pub fn clip(&self, u: T) -> T {
        match self.clip {
            Some(c) => u.max(-c).min(c),
            None => u,
        }
    }

    pub fn eval_drift(&self, u: &Field<T>) -> Result<Field<T>> {
        self.eval_mode(u, 0)
    }

    /// `g_i(u)` for `1 ≤ i ≤ m`.
    pub fn eval_noise(&self, u: &Field<T>, i: usize) -> Result<Field<T>> {
        if i == 0 || i > self.modes() {
            return Err(SpdeError::ModeOutOfRange { mode: i, modes: self.modes() });
        }
        self.eval_mode(u, i)
    }

    fn eval_mode(&self, u: &Field<T>, i: usize) -> Result<Field<T>> {
        let l = self.lambdas[i];
        self.kappa[i].zip_map(u, |k, v| k + l * self.clip(v))
    }

    /// `out += dt·f(u) + Σ_i g_i(u)·dw[i-1]` on raw node values.
    pub(crate) fn add_forcing(&self, u: &[T], dt: T, dw: &[T], out: &mut [T]) {
        let slope = dt * self.lambdas[0] + self.lambdas[1..].iter().zip(dw).map(|(&l, &w)| l * w).sum::<T>();
        for (j, o) in out.iter_mut().enumerate() {
            *o += dt * self.kappa[0].values()[j] + slope * self.clip(u[j]);
        }
        for (k, &w) in self.kappa[1..].iter().zip(dw) {
            if w != T::zero() {
                for (o, &kv) in out.iter_mut().zip(k.values()) {
                    *o += kv * w;
                }
            }
        }
    }

    /// `out += Σ_i g_i(u)·dw[i-1]` only.
    pub(crate) fn add_noise(&self, u: &[T], dw: &[T], out: &mut [T]) {
        let slope: T = self.lambdas[1..].iter().zip(dw).map(|(&l, &w)| l * w).sum();
        for (j, o) in out.iter_mut().enumerate() {
            *o += slope * self.clip(u[j]);
        }
        for (k, &w) in self.kappa[1..].iter().zip(dw) {
            if w != T::zero() {
                for (o, &kv) in out.iter_mut().zip(k.values()) {
                    *o += kv * w;
                }
            }
        }
    }

    /// `out[i-1] = ⟨g_i(u), w⟩` for every noise mode, on raw node values.
    pub(crate) fn noise_inners(&self, u: &[T], w: &[T], vol: T, out: &mut [T]) {
        let cu_w = u.iter().zip(w).fold(T::zero(), |acc, (&uv, &wv)| acc + self.clip(uv) * wv) * vol;
        for (o, (k, &l)) in out.iter_mut().zip(self.kappa[1..].iter().zip(&self.lambdas[1..])) {
            *o = dot(k.values(), w) * vol + l * cu_w;
        }
    }

    /// `|g(u)|²_{ℓ²}` at node `j` for the state value `uj`.
    #[inline]
    pub(crate) fn noise_sq_at(&self, j: usize, uj: T) -> T {
        let c = self.clip(uj);
        self.kk[j] + (T::one() + T::one()) * c * self.kl[j] + c * c * self.ll
    }

    /// `f(u)` at node `j`.
    #[inline]
    pub(crate) fn drift_at(&self, j: usize, uj: T) -> T {
        self.kappa[0].values()[j] + self.lambdas[0] * self.clip(uj)
    }

    /// Checks `|f| + |g|_{ℓ²} ≤ K + Λ|u|` at every node for every probe value.
    pub fn validate_growth(&self, growth: &GrowthData<T>, probes: &[f64]) -> GrowthReport {
        let mut worst = f64::INFINITY;
        let mut worst_at = (0, f64::NAN);
        let lam = growth.growth();
        for &p in probes {
            let u = T::of(p);
            for (j, &kv) in growth.k().values().iter().enumerate() {
                let lhs = self.drift_at(j, u).abs().as_f64() + self.noise_sq_at(j, u).max(T::zero()).sqrt().as_f64();
                let rhs = kv.as_f64() + lam * p.abs();
                let slack = (rhs - lhs) / rhs.max(1.0);
                if slack < worst {
                    worst = slack;
                    worst_at = (j, p);
                }
            }
        }
        GrowthReport { pass: !probes.is_empty() && worst >= -1e-12, worst_slack: worst, worst_node: worst_at.0, worst_probe: worst_at.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub pass: bool,
    /// Smallest relative slack `(K + Λ|u| − |f| − |g|)/max(1, K + Λ|u|)`.
    pub worst_slack: f64,
    pub worst_node: usize,
    pub worst_probe: f64,
}
