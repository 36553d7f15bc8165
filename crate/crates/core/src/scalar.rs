//! Scalar abstraction for field values.
//!
//! Everything that touches field data is generic over [`Real`]; times,
//! probabilities and fitted constants stay in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar usable for field values: `f32` or `f64`.
pub trait Real: Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    /// Relative residual the conjugate-gradient solver targets at this precision.
    const CG_TOLERANCE: f64;

    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real")
    }

    /// Widening conversion to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f64 {
    const CG_TOLERANCE: f64 = 1e-10;
}

impl Real for f32 {
    const CG_TOLERANCE: f64 = 1e-5;
}
