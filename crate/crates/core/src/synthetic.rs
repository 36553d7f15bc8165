//! Random smooth space-time data for exercising the diagnostics without a solve.

use rand::Rng;

use crate::error::Result;
use crate::grid::{Field, Grid};
use crate::rng::StreamKey;
use crate::scalar::Real;
use crate::trajectory::Trajectory;

/// One term `(α + β sin(ω t + ψ)) cos(2π k·x / L + θ)`.
#[derive(Clone, Copy, Debug)]
struct Term {
    wave: [f64; 3],
    phase: f64,
    alpha: f64,
    beta: f64,
    omega: f64,
    psi: f64,
}

/// A random trigonometric polynomial in space and time.
#[derive(Clone, Debug)]
pub struct FourierData {
    grid: Grid,
    offset: f64,
    terms: Vec<Term>,
}

impl FourierData {
    /// `terms` random modes with wavenumbers up to `max_wave` per axis and
    /// amplitudes in `[−amplitude, amplitude]`, plus a random offset of the same size.
    pub fn random(grid: Grid, terms: usize, max_wave: u32, amplitude: f64, key: &StreamKey) -> Self {
        let mut rng = key.stream(0);
        let tau = std::f64::consts::TAU;
        let wave_number = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(-(max_wave as i64)..=max_wave as i64) as f64;
        let terms = (0..terms)
            .map(|_| {
                let mut wave = [0.0; 3];
                for w in wave.iter_mut().take(grid.dim()) {
                    *w = wave_number(&mut rng);
                }
                Term {
                    wave,
                    phase: rng.random_range(0.0..tau),
                    alpha: rng.random_range(-amplitude..=amplitude),
                    beta: rng.random_range(-amplitude..=amplitude),
                    omega: rng.random_range(0.0..tau),
                    psi: rng.random_range(0.0..tau),
                }
            })
            .collect();
        let offset = rng.random_range(-amplitude..=amplitude);
        Self { grid, offset, terms }
    }

    pub fn eval(&self, t: f64, x: [f64; 3]) -> f64 {
        let k = std::f64::consts::TAU / self.grid.length();
        self.offset
            + self
                .terms
                .iter()
                .map(|m| {
                    let arg = k * (m.wave[0] * x[0] + m.wave[1] * x[1] + m.wave[2] * x[2]) + m.phase;
                    (m.alpha + m.beta * (m.omega * t + m.psi).sin()) * arg.cos()
                })
                .sum::<f64>()
    }

    pub fn field<T: Real>(&self, t: f64) -> Field<T> {
        Field::from_fn(self.grid, |x| self.eval(t, x))
    }

    pub fn trajectory<T: Real>(&self, t0: f64, t1: f64, dt: f64) -> Result<Trajectory<T>> {
        Trajectory::from_fn(self.grid, t0, t1, dt, |t| self.field(t))
    }
}

/// Independent `±1` node values.
pub fn random_signs<T: Real>(grid: Grid, key: &StreamKey) -> Field<T> {
    let mut rng = key.stream(0);
    Field::from_fn(grid, |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
}
