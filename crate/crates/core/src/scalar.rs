//! Floating-point scalar abstraction: f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Scalar type the numeric modules are generic over.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Norm threshold below which a vector is treated as zero.
    fn norm_eps() -> Self;

    /// Conversion from f64 for constants and counts; panics only for
    /// non-representable values, which none of the library constants are.
    fn from_f64_const(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }
}

impl Scalar for f32 {
    fn norm_eps() -> Self {
        1e-12
    }
}

impl Scalar for f64 {
    fn norm_eps() -> Self {
        1e-12
    }
}
