//! Discrete solution paths on a uniform time grid and the mixed space-time
//! norms `‖u‖_{p₁,p₂,I} = ‖ ‖u(t)‖_{p₂} ‖_{Lᵖ¹(I)}`.

use crate::error::{Result, SpdeError};
use crate::grid::{Field, Grid};
use crate::scalar::Real;

/// Number of uniform steps of size `dt` in `[t0, t1]`; the ratio must be an
/// integer to 1e-9 relative.
pub fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SpdeError::InvalidArgument(format!("time step {dt} must be positive")));
    }
    if !(t1 >= t0) {
        return Err(SpdeError::InvalidArgument(format!("interval [{t0}, {t1}] is reversed")));
    }
    let ratio = (t1 - t0) / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(SpdeError::InvalidArgument(format!("dt = {dt} does not divide the interval length {}", t1 - t0)));
    }
    Ok(steps as usize)
}

/// Time-indexed sequence of fields at `t0, t0 + dt, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    grid: Grid,
    t0: f64,
    dt: f64,
    snapshots: Vec<Field<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(grid: Grid, t0: f64, dt: f64, snapshots: Vec<Field<T>>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SpdeError::InvalidArgument(format!("time step {dt} must be positive")));
        }
        if snapshots.is_empty() {
            return Err(SpdeError::InvalidArgument("trajectory needs at least one snapshot".into()));
        }
        for s in &snapshots {
            grid.ensure_same(s.grid())?;
        }
        Ok(Self { grid, t0, dt, snapshots })
    }

    /// Builds a trajectory by sampling `f(t)` at each node of `[t0, t1]`.
    pub fn from_fn(grid: Grid, t0: f64, t1: f64, dt: f64, mut f: impl FnMut(f64) -> Field<T>) -> Result<Self> {
        let steps = step_count(t0, t1, dt)?;
        let snapshots = (0..=steps).map(|m| f(t0 + m as f64 * dt)).collect();
        Self::new(grid, t0, dt, snapshots)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn t0(&self) -> f64 {
        self.t0
    }

    #[inline]
    pub fn t1(&self) -> f64 {
        self.time(self.snapshots.len() - 1)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn time(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    #[inline]
    pub fn snapshot(&self, m: usize) -> &Field<T> {
        &self.snapshots[m]
    }

    pub fn snapshots(&self) -> &[Field<T>] {
        &self.snapshots
    }

    pub fn snapshots_mut(&mut self) -> &mut [Field<T>] {
        &mut self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<Field<T>> {
        self.snapshots
    }

    pub fn map(&self, f: impl Fn(&Field<T>) -> Field<T>) -> Self {
        Self { grid: self.grid, t0: self.t0, dt: self.dt, snapshots: self.snapshots.iter().map(f).collect() }
    }

    /// Node index nearest to `t`, clamped to the trajectory.
    pub fn nearest_node(&self, t: f64) -> usize {
        let m = ((t - self.t0) / self.dt).round();
        m.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    /// Snaps `[start, end]` to the inclusive node range it covers.
    pub fn node_range(&self, start: f64, end: f64) -> Result<(usize, usize)> {
        let half = 0.5 * self.dt;
        if !(start <= end) || end < self.t0 - half || start > self.t1() + half {
            return Err(SpdeError::EmptyInterval { start, end, t0: self.t0, t1: self.t1() });
        }
        Ok((self.nearest_node(start), self.nearest_node(end)))
    }

    /// Errors unless the trajectory spans `[need0, need1]` up to half a step.
    pub fn ensure_covers(&self, need0: f64, need1: f64) -> Result<()> {
        let half = 0.5 * self.dt;
        if self.t0 > need0 + half || self.t1() < need1 - half {
            return Err(SpdeError::SpanTooShort { t0: self.t0, t1: self.t1(), need0, need1 });
        }
        Ok(())
    }

    /// Copy of the nodes `first..=last`.
    pub fn slice(&self, first: usize, last: usize) -> Self {
        Self { grid: self.grid, t0: self.time(first), dt: self.dt, snapshots: self.snapshots[first..=last].to_vec() }
    }

    /// Mixed norm `‖u‖_{p1,p2,I}`: spatial `Lᵖ²` per snapshot, trapezoid
    /// `Lᵖ¹` in time over the nodes of `I`.
    pub fn mixed_norm(&self, p1: f64, p2: f64, interval: (f64, f64)) -> Result<T> {
        let (i0, i1) = self.node_range(interval.0, interval.1)?;
        let vol = self.grid.cell_volume();
        let mut norms = Vec::with_capacity(i1 - i0 + 1);
        for s in &self.snapshots[i0..=i1] {
            s.ensure_finite()?;
            norms.push(crate::grid::lp_norm_unchecked(s.values(), p2, vol));
        }
        Ok(time_lp_norm(&norms, self.dt, p1))
    }
}

/// Trapezoid weight of node `m` among `count` equispaced nodes.
#[inline]
pub fn trapezoid_weight(m: usize, count: usize, dt: f64) -> f64 {
    if count < 2 {
        0.0
    } else if m == 0 || m + 1 == count {
        0.5 * dt
    } else {
        dt
    }
}

/// Trapezoid-rule integral of equispaced samples.
pub fn trapezoid<T: Real>(samples: &[T], dt: f64) -> T {
    let n = samples.len();
    samples.iter().enumerate().fold(T::zero(), |acc, (m, &v)| acc + v * T::of(trapezoid_weight(m, n, dt)))
}

/// `Lᵖ` norm in time of the nonnegative samples `norms`; `p = ∞` is the max.
pub fn time_lp_norm<T: Real>(norms: &[T], dt: f64, p: f64) -> T {
    if p == f64::INFINITY {
        return norms.iter().fold(T::zero(), |m, &v| m.max(v));
    }
    let scale = norms.iter().fold(T::zero(), |m, &v| m.max(v));
    if scale == T::zero() {
        return T::zero();
    }
    let pe = T::of(p);
    let powered: Vec<T> = norms.iter().map(|&v| (v / scale).powf(pe)).collect();
    scale * trapezoid(&powered, dt).powf(T::one() / pe)
}
