//! Increments of the `m`-dimensional driving Wiener process.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SpdeError};
use crate::rng::StreamKey;
use crate::scalar::Real;
use crate::trajectory::step_count;

/// Gaussian increments `ΔWⁱ_k ~ N(0, dt)` for modes `i = 1..=m` on a uniform
/// grid of `[t0, t0 + steps·dt]`. Mode `i` is drawn from substream `i` of the
/// key, so modes are independent and any mode can be regenerated alone.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath<T> {
    modes: usize,
    t0: f64,
    dt: f64,
    steps: usize,
    // mode-major: increments[(i - 1) * steps + k]
    increments: Vec<T>,
    key: StreamKey,
}

impl<T: Real> NoisePath<T> {
    pub fn generate(modes: usize, t0: f64, t1: f64, dt: f64, key: StreamKey) -> Result<Self> {
        let steps = step_count(t0, t1, dt)?;
        let sd = dt.sqrt();
        let mut increments = Vec::with_capacity(modes * steps);
        for i in 1..=modes {
            let mut rng = key.stream(i as u64);
            increments.extend((0..steps).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(sd * z)
            }));
        }
        Ok(Self { modes, t0, dt, steps, increments, key })
    }

    /// Path with caller-supplied increments, mode-major.
    pub fn from_increments(modes: usize, t0: f64, dt: f64, increments: Vec<T>, key: StreamKey) -> Result<Self> {
        if modes == 0 && !increments.is_empty() || modes > 0 && !increments.len().is_multiple_of(modes) {
            return Err(SpdeError::InvalidArgument("increment count is not a multiple of the mode count".into()));
        }
        if !(dt > 0.0) {
            return Err(SpdeError::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let steps = increments.len().checked_div(modes).unwrap_or(0);
        Ok(Self { modes, t0, dt, steps, increments, key })
    }

    /// Sums each run of `factor` consecutive increments, left to right.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !factor.is_power_of_two() || !self.steps.is_multiple_of(factor) {
            return Err(SpdeError::InvalidArgument(format!("coarsening factor {factor} must be a power of two dividing {} steps", self.steps)));
        }
        let steps = self.steps / factor;
        let mut increments = Vec::with_capacity(self.modes * steps);
        for i in 0..self.modes {
            let fine = &self.increments[i * self.steps..(i + 1) * self.steps];
            increments.extend(fine.chunks_exact(factor).map(|c| c.iter().fold(T::zero(), |acc, &v| acc + v)));
        }
        Ok(Self { modes: self.modes, t0: self.t0, dt: self.dt * factor as f64, steps, increments, key: self.key })
    }

    #[inline]
    pub fn modes(&self) -> usize {
        self.modes
    }

    #[inline]
    pub fn t0(&self) -> f64 {
        self.t0
    }

    #[inline]
    pub fn t1(&self) -> f64 {
        self.t0 + self.steps as f64 * self.dt
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn key(&self) -> &StreamKey {
        &self.key
    }

    /// `ΔWⁱ` over step `k`, `i` in `1..=m`.
    #[inline]
    pub fn increment(&self, mode: usize, step: usize) -> T {
        self.increments[(mode - 1) * self.steps + step]
    }

    /// All increments of one mode.
    pub fn mode(&self, mode: usize) -> &[T] {
        &self.increments[(mode - 1) * self.steps..mode * self.steps]
    }

    /// Fills `out[i-1] = ΔWⁱ_k`.
    pub fn increments_at(&self, step: usize, out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate().take(self.modes) {
            *o = self.increments[i * self.steps + step];
        }
    }

    /// Step index starting at time `t`; `t` must be a node of this path.
    pub fn step_at(&self, t: f64) -> Result<usize> {
        let r = (t - self.t0) / self.dt;
        let k = r.round();
        if (r - k).abs() > 1e-6 || k < 0.0 || k as usize > self.steps {
            return Err(SpdeError::ResolutionMismatch(format!("time {t} is not a node of the noise grid (t0 = {}, dt = {})", self.t0, self.dt)));
        }
        Ok(k as usize)
    }

    /// Checks that a trajectory with step `dt` on `[t0, t1]` can be driven by this path.
    pub fn ensure_compatible(&self, t0: f64, t1: f64, dt: f64) -> Result<()> {
        if (dt - self.dt).abs() > 1e-9 * self.dt {
            return Err(SpdeError::ResolutionMismatch(format!("trajectory dt {dt} vs noise dt {}", self.dt)));
        }
        self.step_at(t0)?;
        self.step_at(t1)?;
        Ok(())
    }

    /// Brownian path `Wⁱ` at the nodes, starting from zero.
    pub fn brownian(&self, mode: usize) -> Vec<T> {
        let mut w = Vec::with_capacity(self.steps + 1);
        let mut acc = T::zero();
        w.push(acc);
        for &d in self.mode(mode) {
            acc += d;
            w.push(acc);
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRole;

    fn key(path: u64) -> StreamKey {
        StreamKey::new(9, path, StreamRole::Noise)
    }

    #[test]
    fn deterministic_in_key() {
        let a = NoisePath::<f64>::generate(3, 0.0, 1.0, 0.01, key(1)).unwrap();
        let b = NoisePath::<f64>::generate(3, 0.0, 1.0, 0.01, key(1)).unwrap();
        let c = NoisePath::<f64>::generate(3, 0.0, 1.0, 0.01, key(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.mode(1), c.mode(1));
        assert_ne!(a.mode(1), a.mode(2));
        assert!(NoisePath::<f64>::generate(3, 0.0, 1.0, 0.0, key(1)).is_err());
        assert!(NoisePath::<f64>::generate(3, 0.0, 1.0, 0.3, key(1)).is_err());
    }

    #[test]
    fn coarsening_is_exact_summation() {
        let fine = NoisePath::<f64>::generate(2, 0.0, 1.0, 1.0 / 64.0, key(3)).unwrap();
        assert_eq!(fine.coarsen(1).unwrap(), fine);
        let c4 = fine.coarsen(4).unwrap();
        assert_eq!(fine.coarsen(2).unwrap().coarsen(2).unwrap().steps(), 16);
        assert_eq!(c4.steps(), 16);
        assert!((c4.dt() - 1.0 / 16.0).abs() < 1e-15);
        for i in 1..=2 {
            for k in 0..16 {
                let s = fine.mode(i)[4 * k..4 * k + 4].iter().fold(0.0, |a, &v| a + v);
                assert_eq!(c4.increment(i, k), s);
            }
        }
        assert!(fine.coarsen(3).is_err());
        assert!(fine.coarsen(128).is_err());
    }

    #[test]
    fn step_lookup() {
        let p = NoisePath::<f64>::generate(1, 0.0, 2.0, 1e-3, key(0)).unwrap();
        assert_eq!(p.step_at(0.5).unwrap(), 500);
        assert!(p.step_at(0.50037).is_err());
        assert!(p.ensure_compatible(0.0, 2.0, 1e-3).is_ok());
        assert!(p.ensure_compatible(0.0, 2.0, 2e-3).is_err());
        assert_eq!(p.brownian(1).len(), 2001);
    }
}
