//! Scalar abstraction over the floating-point type used by the
//! differentiable pipeline.
//!
//! Encoding, losses and training run either in 32-bit mode (fast) or
//! 64-bit checking mode (gradient verification, byte-reproducible CLI
//! runs). Geometry and evaluation metrics always use `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar for tensors, encoders and losses: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float + Debug + Display + Sum + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used where geometry (always `f64`)
    /// enters the differentiable pipeline.
    fn from_f64(x: f64) -> Self;

    /// Widening conversion for reporting and metric code.
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }
}
