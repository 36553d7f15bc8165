//! Simulation of quasilinear stochastic parabolic equations
//!
//! ```text
//! ∂_t u = div(A∇u) + f(t, x, u) + g_i(t, x, u) ẇⁱ
//! ```
//!
//! with rough random coefficients on a periodic box, together with the
//! De Giorgi level-set diagnostics, martingale tail statistics and Hölder
//! estimates used to probe the regularity of the solutions.
//!
//! Numerical kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the ensemble driver uses.

// `!(x >= lo)` style range checks reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod config;
pub mod convergence;
pub mod degiorgi;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod noise;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod snapshot;
pub mod solver;
pub mod stats;
pub mod stencil;
pub mod synthetic;
pub mod trajectory;
pub mod verify;

pub use error::{Result, SpdeError};
pub use grid::{Field, Grid, MatrixField};
pub use scalar::Real;
pub use trajectory::Trajectory;

pub type Field64 = grid::Field<f64>;
pub type Field32 = grid::Field<f32>;
pub type MatrixField64 = grid::MatrixField<f64>;
pub type Trajectory64 = trajectory::Trajectory<f64>;
pub type Trajectory32 = trajectory::Trajectory<f32>;
pub type NoisePath64 = noise::NoisePath<f64>;
pub type Nonlinearity64 = coefficients::Nonlinearity<f64>;
pub type GrowthData64 = coefficients::GrowthData<f64>;
pub type ProblemSpec64 = solver::ProblemSpec<f64>;
pub type ProblemSpec32 = solver::ProblemSpec<f32>;
