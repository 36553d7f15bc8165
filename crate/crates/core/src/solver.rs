//! Euler–Maruyama time stepping for
//! `∂_t u = div(A∇u) + f(u) + g_i(u) ẇⁱ`
//! with implicit diffusion, plus the constant-coefficient companion equation
//! `dv = Δv dt + g_i(u) dwⁱ` and a weak-form residual probe.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSchedule, EllipticitySpec, GrowthData, Nonlinearity};
use crate::error::{Result, SpdeError};
use crate::grid::{dot, Field, Grid, MatrixField};
use crate::noise::NoisePath;
use crate::rng::{StreamKey, StreamRole};
use crate::scalar::Real;
use crate::stencil::DiffusionOperator;
use crate::trajectory::{step_count, Trajectory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Backward Euler in the diffusion, forward in reaction and noise.
    #[default]
    SemiImplicit,
    /// Fully explicit; needs `dt ≤ λ dx² / (4n)`.
    Explicit,
}

#[derive(Clone, Debug)]
pub struct ProblemSpec<T> {
    pub grid: Grid,
    pub ellipticity: EllipticitySpec,
    pub growth: GrowthData<T>,
    pub nonlinearity: Nonlinearity<T>,
    pub u0: Field<T>,
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
}

impl<T: Real> ProblemSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        g.ensure_same(self.u0.grid())?;
        g.ensure_same(self.growth.k().grid())?;
        g.ensure_same(self.nonlinearity.grid())?;
        self.u0.ensure_finite()?;
        self.ellipticity.validate(g, self.dt)?;
        step_count(0.0, self.t_end, self.dt)?;
        if self.scheme == Scheme::Explicit {
            let limit = self.ellipticity.lambda * g.dx().powi(2) / (4.0 * g.dim() as f64);
            if self.dt > limit * (1.0 + 1e-12) {
                return Err(SpdeError::InvalidArgument(format!("explicit scheme needs dt <= {limit:e}, got {:e}", self.dt)));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        step_count(0.0, self.t_end, self.dt).expect("validated problem")
    }

    /// Coefficient schedule for the path driven by `noise_key`.
    pub fn schedule(&self, noise_key: &StreamKey) -> CoefficientSchedule<T> {
        CoefficientSchedule::Sampled { spec: self.ellipticity.clone(), grid: self.grid, key: noise_key.with_role(StreamRole::Coefficient) }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport<T> {
    pub trajectory: Trajectory<T>,
    pub cg_iterations: Vec<usize>,
    pub cg_residuals: Vec<f64>,
    pub wall_time: Duration,
}

/// Face operator plus inverse Jacobi diagonal of `I − dt·div(A∇·)`. On a
/// line of at least three nodes the matrix is cyclic tridiagonal and is
/// factored for a direct solve instead.
#[derive(Clone, Debug)]
pub struct ImplicitOperator<T> {
    op: DiffusionOperator<T>,
    dt: T,
    diag_inv: Vec<T>,
    direct: Option<CyclicTridiagonal<T>>,
}

impl<T: Real> ImplicitOperator<T> {
    pub fn new(op: DiffusionOperator<T>, dt: f64) -> Self {
        let dt = T::of(dt);
        let diag_inv = op.diagonal().into_iter().map(|d| T::one() / (T::one() + dt * d)).collect();
        let g = op.grid();
        let direct = (g.dim() == 1 && g.len() >= 3).then(|| {
            let faces: Vec<T> = (0..g.len()).map(|j| op.face(j, 0) * dt).collect();
            CyclicTridiagonal::new(&faces)
        });
        Self { op, dt, diag_inv, direct }
    }

    pub fn diffusion(&self) -> &DiffusionOperator<T> {
        &self.op
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        self.op.apply(x, out);
        for (o, &xv) in out.iter_mut().zip(x) {
            *o = xv - self.dt * *o;
        }
    }
}

/// Thomas factorization of the symmetric cyclic tridiagonal matrix with
/// `M_{j,j+1} = M_{j+1,j} = −c_j` (indices mod `N`) and `M_jj = 1 + c_j + c_{j−1}`,
/// with the corner handled by Sherman–Morrison.
#[derive(Clone, Debug)]
struct CyclicTridiagonal<T> {
    // Sub-diagonal a_j = M_{j,j−1}, normalized super-diagonal c'_j and 1/pivot_j.
    sub: Vec<T>,
    sup_norm: Vec<T>,
    pivot_inv: Vec<T>,
    corner: T,
    gamma: T,
    // Solution of the bordered system for the correction vector.
    z: Vec<T>,
}

impl<T: Real> CyclicTridiagonal<T> {
    fn new(c: &[T]) -> Self {
        let n = c.len();
        let diag: Vec<T> = (0..n).map(|j| T::one() + c[j] + c[(j + n - 1) % n]).collect();
        let corner = -c[n - 1];
        let gamma = -diag[0];
        let mut d = diag;
        d[0] -= gamma;
        d[n - 1] -= corner * corner / gamma;
        let sub: Vec<T> = (0..n).map(|j| if j == 0 { T::zero() } else { -c[j - 1] }).collect();
        let mut sup_norm = vec![T::zero(); n];
        let mut pivot_inv = vec![T::zero(); n];
        for j in 0..n {
            let pivot = if j == 0 { d[0] } else { d[j] - sub[j] * sup_norm[j - 1] };
            pivot_inv[j] = T::one() / pivot;
            if j + 1 < n {
                sup_norm[j] = -c[j] * pivot_inv[j];
            }
        }
        let mut t = Self { sub, sup_norm, pivot_inv, corner, gamma, z: Vec::new() };
        let mut u = vec![T::zero(); n];
        u[0] = gamma;
        u[n - 1] = corner;
        let mut z = vec![T::zero(); n];
        t.thomas(&u, &mut z);
        t.z = z;
        t
    }

    fn thomas(&self, r: &[T], x: &mut [T]) {
        let n = r.len();
        x[0] = r[0] * self.pivot_inv[0];
        for j in 1..n {
            x[j] = (r[j] - self.sub[j] * x[j - 1]) * self.pivot_inv[j];
        }
        for j in (0..n - 1).rev() {
            let next = x[j + 1];
            x[j] -= self.sup_norm[j] * next;
        }
    }

    fn solve(&self, r: &[T], x: &mut [T]) {
        let n = r.len();
        self.thomas(r, x);
        let z = &self.z;
        let ratio = self.corner / self.gamma;
        let factor = (x[0] + ratio * x[n - 1]) / (T::one() + z[0] + ratio * z[n - 1]);
        for (xv, &zv) in x.iter_mut().zip(z) {
            *xv -= factor * zv;
        }
    }
}

/// Direct solve with the true relative residual reported as one iteration.
fn direct_solve<T: Real>(op: &ImplicitOperator<T>, m: &CyclicTridiagonal<T>, b: &[T], x: &mut [T], work: &mut CgWork<T>) -> CgStats {
    let b_norm = dot(b, b).sqrt();
    m.solve(b, x);
    if b_norm == T::zero() {
        return CgStats { iterations: 1, residual: 0.0 };
    }
    work.ap.resize(b.len(), T::zero());
    op.apply(x, &mut work.ap);
    let r: T = b.iter().zip(&work.ap).map(|(&bv, &av)| (bv - av) * (bv - av)).fold(T::zero(), |s, v| s + v);
    CgStats { iterations: 1, residual: (r.sqrt() / b_norm).as_f64() }
}

#[derive(Clone, Debug, Default)]
struct CgWork<T> {
    r: Vec<T>,
    z: Vec<T>,
    p: Vec<T>,
    ap: Vec<T>,
}

/// Jacobi-preconditioned conjugate gradient for `(I − dt L) x = b`; `x` holds
/// the initial guess on entry.
fn conjugate_gradient<T: Real>(op: &ImplicitOperator<T>, b: &[T], x: &mut [T], work: &mut CgWork<T>) -> Result<CgStats> {
    let n = b.len();
    let tol = T::CG_TOLERANCE;
    let max_iter = 10 * n;
    let b_norm = dot(b, b).sqrt();
    if b_norm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgStats::default());
    }
    work.r.resize(n, T::zero());
    work.z.resize(n, T::zero());
    work.p.resize(n, T::zero());
    work.ap.resize(n, T::zero());
    let CgWork { r, z, p, ap } = work;

    op.apply(x, ap);
    for j in 0..n {
        r[j] = b[j] - ap[j];
        z[j] = op.diag_inv[j] * r[j];
        p[j] = z[j];
    }
    let mut rz = dot(r, z);
    let mut res = dot(r, r).sqrt() / b_norm;
    let mut it = 0;
    while res.as_f64() > tol {
        if it >= max_iter {
            return Err(SpdeError::CgNotConverged { iterations: it, residual: res.as_f64() });
        }
        op.apply(p, ap);
        let alpha = rz / dot(p, ap);
        for j in 0..n {
            x[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
        }
        res = dot(r, r).sqrt() / b_norm;
        it += 1;
        for j in 0..n {
            z[j] = op.diag_inv[j] * r[j];
        }
        let rz_new = dot(r, z);
        let beta = rz_new / rz;
        rz = rz_new;
        for j in 0..n {
            p[j] = z[j] + beta * p[j];
        }
    }
    Ok(CgStats { iterations: it, residual: res.as_f64() })
}

/// Reusable buffers for repeated steps on one grid.
#[derive(Clone, Debug, Default)]
pub struct Stepper<T> {
    rhs: Vec<T>,
    lu: Vec<T>,
    work: CgWork<T>,
}

impl<T: Real> Stepper<T> {
    pub fn new() -> Self {
        Self { rhs: Vec::new(), lu: Vec::new(), work: CgWork::default() }
    }

    /// Finishes a step whose explicit part is already in `self.rhs`.
    fn finish(&mut self, u: &[T], diffusion: Option<&ImplicitOperator<T>>, scheme: Scheme, out: &mut Vec<T>) -> Result<CgStats> {
        out.resize(u.len(), T::zero());
        match (diffusion, scheme) {
            (None, _) => {
                out.copy_from_slice(&self.rhs);
                Ok(CgStats::default())
            }
            (Some(op), Scheme::Explicit) => {
                self.lu.resize(u.len(), T::zero());
                op.op.apply(u, &mut self.lu);
                for ((o, &r), &l) in out.iter_mut().zip(&self.rhs).zip(&self.lu) {
                    *o = r + op.dt * l;
                }
                Ok(CgStats::default())
            }
            (Some(op), Scheme::SemiImplicit) => {
                out.copy_from_slice(&self.rhs);
                match &op.direct {
                    Some(m) => Ok(direct_solve(op, m, &self.rhs, out, &mut self.work)),
                    None => conjugate_gradient(op, &self.rhs, out, &mut self.work),
                }
            }
        }
    }

    /// One step of the main equation from `u` into `out`. `dw[i-1] = ΔWⁱ`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        u: &[T],
        diffusion: Option<&ImplicitOperator<T>>,
        nl: &Nonlinearity<T>,
        dw: &[T],
        dt: f64,
        scheme: Scheme,
        out: &mut Vec<T>,
    ) -> Result<CgStats> {
        self.rhs.clear();
        self.rhs.extend_from_slice(u);
        nl.add_forcing(u, T::of(dt), dw, &mut self.rhs);
        self.finish(u, diffusion, scheme, out)
    }

    /// One step of the companion equation `dv = Δv dt + g_i(u) dwⁱ`.
    fn companion_step(&mut self, v: &[T], u: &[T], heat: &ImplicitOperator<T>, nl: &Nonlinearity<T>, dw: &[T], out: &mut Vec<T>) -> Result<CgStats> {
        self.rhs.clear();
        self.rhs.extend_from_slice(v);
        nl.add_noise(u, dw, &mut self.rhs);
        self.finish(v, Some(heat), Scheme::SemiImplicit, out)
    }
}

/// Single step on fields; `diffusion = None` switches the `div(A∇u)` term off.
pub fn step<T: Real>(
    u: &Field<T>,
    diffusion: Option<&MatrixField<T>>,
    nl: &Nonlinearity<T>,
    dw: &[T],
    dt: f64,
    scheme: Scheme,
) -> Result<(Field<T>, CgStats)> {
    if dw.len() != nl.modes() {
        return Err(SpdeError::InvalidArgument(format!("{} increments for {} modes", dw.len(), nl.modes())));
    }
    let op = diffusion
        .map(|a| {
            u.grid().ensure_same(a.grid())?;
            Ok::<_, SpdeError>(ImplicitOperator::new(DiffusionOperator::new(a), dt))
        })
        .transpose()?;
    let mut out = Vec::new();
    let stats = Stepper::new().step(u.values(), op.as_ref(), nl, dw, dt, scheme, &mut out)?;
    let next = Field::new(*u.grid(), out)?;
    next.ensure_finite()?;
    Ok((next, stats))
}

/// Caches the implicit operator of the current coefficient epoch.
struct EpochOperators<'a, T> {
    schedule: &'a CoefficientSchedule<T>,
    dt: f64,
    current: Option<(u64, ImplicitOperator<T>)>,
}

impl<'a, T: Real> EpochOperators<'a, T> {
    fn new(schedule: &'a CoefficientSchedule<T>, dt: f64) -> Self {
        Self { schedule, dt, current: None }
    }

    fn at(&mut self, t: f64) -> Result<&ImplicitOperator<T>> {
        let epoch = self.schedule.epoch_at(t);
        if self.current.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let a = self.schedule.field(epoch)?;
            self.current = Some((epoch, ImplicitOperator::new(DiffusionOperator::new(&a), self.dt)));
        }
        Ok(&self.current.as_ref().expect("just filled").1)
    }
}

/// Runs the scheme over `[0, t_end]` on `path`, resampling `A` every epoch.
pub fn solve<T: Real>(ps: &ProblemSpec<T>, path: &NoisePath<T>) -> Result<SolveReport<T>> {
    ps.validate()?;
    let schedule = ps.schedule(path.key());
    solve_with(ps, &schedule, path)
}

/// Like [`solve`] with an explicit coefficient schedule.
pub fn solve_with<T: Real>(ps: &ProblemSpec<T>, schedule: &CoefficientSchedule<T>, path: &NoisePath<T>) -> Result<SolveReport<T>> {
    let started = Instant::now();
    let steps = step_count(0.0, ps.t_end, ps.dt)?;
    path.ensure_compatible(0.0, ps.t_end, ps.dt)?;
    if path.modes() != ps.nonlinearity.modes() {
        return Err(SpdeError::InvalidArgument(format!("noise path has {} modes, nonlinearity {}", path.modes(), ps.nonlinearity.modes())));
    }
    let offset = path.step_at(0.0)?;
    let mut ops = EpochOperators::new(schedule, ps.dt);
    let mut stepper = Stepper::new();
    let mut dw = vec![T::zero(); path.modes()];
    let mut snapshots = Vec::with_capacity(steps + 1);
    let mut cg_iterations = Vec::with_capacity(steps);
    let mut cg_residuals = Vec::with_capacity(steps);
    snapshots.push(ps.u0.clone());
    let mut next = Vec::new();
    for m in 0..steps {
        let t = m as f64 * ps.dt;
        let op = ops.at(t)?;
        path.increments_at(offset + m, &mut dw);
        let u = snapshots[m].values();
        let stats = stepper.step(u, Some(op), &ps.nonlinearity, &dw, ps.dt, ps.scheme, &mut next)?;
        let field = Field::new(ps.grid, std::mem::take(&mut next))?;
        field.ensure_finite()?;
        snapshots.push(field);
        cg_iterations.push(stats.iterations);
        cg_residuals.push(stats.residual);
    }
    Ok(SolveReport { trajectory: Trajectory::new(ps.grid, 0.0, ps.dt, snapshots)?, cg_iterations, cg_residuals, wall_time: started.elapsed() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub residual: f64,
    /// Sum of the magnitudes of every term that entered the residual.
    pub scale: f64,
}

impl WeakResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.residual.abs()
        } else {
            self.residual.abs() / self.scale
        }
    }
}

/// Discrete weak form tested against `phi` over the node range of `interval`:
/// `⟨u(t),φ⟩ − ⟨u(s),φ⟩ + Σ dt⟨A∇u,∇φ⟩ − Σ dt⟨f(u),φ⟩ − Σ ⟨g_i(u),φ⟩ΔWⁱ`,
/// with the diffusion evaluated where the scheme evaluates it.
pub fn weak_residual<T: Real>(
    traj: &Trajectory<T>,
    schedule: &CoefficientSchedule<T>,
    nl: &Nonlinearity<T>,
    path: &NoisePath<T>,
    phi: &Field<T>,
    interval: (f64, f64),
    scheme: Scheme,
) -> Result<WeakResidual> {
    traj.grid().ensure_same(phi.grid())?;
    let (i0, i1) = traj.node_range(interval.0, interval.1)?;
    path.ensure_compatible(traj.time(i0), traj.time(i1), traj.dt())?;
    let offset = path.step_at(traj.time(i0))?;
    let vol = T::of(traj.grid().cell_volume());
    let dt = T::of(traj.dt());
    let mut ops = EpochOperators::new(schedule, traj.dt());
    let mut inners = vec![T::zero(); nl.modes()];
    let mut dw = vec![T::zero(); nl.modes()];

    let end = traj.snapshot(i1).inner(phi)?;
    let start = traj.snapshot(i0).inner(phi)?;
    let mut residual = end - start;
    let mut scale = end.abs() + start.abs();
    for m in i0..i1 {
        let u = traj.snapshot(m).values();
        let diffused = match scheme {
            Scheme::SemiImplicit => traj.snapshot(m + 1).values(),
            Scheme::Explicit => u,
        };
        let op = ops.at(traj.time(m))?;
        let diff = dt * op.diffusion().dirichlet_form_raw(diffused, phi.values());
        let drift = dt * vol * u.iter().zip(phi.values()).enumerate().fold(T::zero(), |acc, (j, (&uv, &pv))| acc + nl.drift_at(j, uv) * pv);
        nl.noise_inners(u, phi.values(), vol, &mut inners);
        path.increments_at(offset + m - i0, &mut dw);
        let mut noise = T::zero();
        for (&g, &w) in inners.iter().zip(&dw) {
            noise += g * w;
            scale += (g * w).abs();
        }
        residual += diff - drift - noise;
        scale += diff.abs() + drift.abs();
    }
    Ok(WeakResidual { residual: residual.as_f64(), scale: scale.as_f64() })
}

/// Krylov split `u = φ + v` on `[t_start, t1]`.
#[derive(Clone, Debug)]
pub struct CompanionSplit<T> {
    pub v: Trajectory<T>,
    pub phi: Trajectory<T>,
}

/// Solves `dv = Δv dt + g_i(u) dwⁱ`, `v(t_start) = 0`, with the noise that
/// drove `u`, and returns `v` together with `φ = u − v`.
pub fn solve_companion<T: Real>(u: &Trajectory<T>, nl: &Nonlinearity<T>, path: &NoisePath<T>, t_start: f64) -> Result<CompanionSplit<T>> {
    u.ensure_covers(t_start, t_start)?;
    let (first, last) = u.node_range(t_start, u.t1())?;
    if (u.time(first) - t_start).abs() > 1e-9 {
        return Err(SpdeError::ResolutionMismatch(format!("t_start = {t_start} is not a trajectory node")));
    }
    path.ensure_compatible(u.time(first), u.time(last), u.dt())?;
    let offset = path.step_at(u.time(first))?;
    let grid = *u.grid();
    let heat = ImplicitOperator::new(DiffusionOperator::laplacian(grid), u.dt());
    let mut stepper = Stepper::new();
    let mut dw = vec![T::zero(); path.modes()];
    let mut vs = Vec::with_capacity(last - first + 1);
    vs.push(Field::zeros(grid));
    let mut next = Vec::new();
    for m in first..last {
        path.increments_at(offset + m - first, &mut dw);
        stepper.companion_step(vs[m - first].values(), u.snapshot(m).values(), &heat, nl, &dw, &mut next)?;
        vs.push(Field::new(grid, std::mem::take(&mut next))?);
    }
    let phis = vs.iter().enumerate().map(|(k, v)| u.snapshot(first + k).sub(v)).collect::<Result<Vec<_>>>()?;
    Ok(CompanionSplit { v: Trajectory::new(grid, u.time(first), u.dt(), vs)?, phi: Trajectory::new(grid, u.time(first), u.dt(), phis)? })
}
