//! Scalar abstraction for all numeric code in this crate.
//!
//! Every algorithm is generic over [`Real`], which extends
//! [`num_traits::Float`] with the error function (needed for exact GELU) and
//! the conversion helpers used when constants are specified as `f64`
//! literals. Implementations are provided for `f32` and `f64`; the crate
//! root exposes `f64` aliases for the common entry points.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssignOps
    + ScalarOperand
    + Sum<Self>
    + for<'a> Sum<&'a Self>
    + Debug
    + Display
    + LowerExp
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Gauss error function.
    fn erf(self) -> Self;

    /// Converts an `f64` constant; panics only for values outside the
    /// target type's range, which never happens for the constants used here.
    fn real(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("constant representable in scalar type")
    }

    /// Widens to `f64` for reporting and serialization boundaries.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Real for f64 {
    fn erf(self) -> Self {
        statrs::function::erf::erf(self)
    }
}

impl Real for f32 {
    fn erf(self) -> Self {
        statrs::function::erf::erf(self as f64) as f32
    }
}
