//! Floating-point abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

/// Scalar the dense/CSR kernels are generic over.
///
/// Blanket-implemented for anything float-like; in practice `f64` (the crate
/// default, see [`crate::Real`]) and `f32`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Conversion from `f64` for literals inside generic code.
    ///
    /// Panics if the value is not representable, which cannot happen for the
    /// constants used in this crate.
    fn from_f64_c(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Widening conversion used by reporting and serialization paths.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
}
