//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable by every kernel in this crate: `f32` or `f64`.
///
/// `f64` is the default precision and the basis of all stated tolerances;
/// `f32` is opt-in.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Send + Sync + Debug + Display + 'static
{
    /// Lossless-enough conversion from `f64` for constants and RNG draws.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }

    /// Widening conversion used by reporting and tolerance checks.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
