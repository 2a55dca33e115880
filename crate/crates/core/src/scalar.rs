//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! The math is written once against [`Scalar`] and instantiated for `f32`
//! (training default) and `f64` (oracles, gradient checks). Metrics are
//! additionally generic over [`MetricScalar`], which admits exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type for tensors, losses and heads.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + ndarray_npy::WritableElement
    + ndarray_npy::ReadableElement
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Field-like type used to accumulate classification metrics.
///
/// Floats satisfy it, and so does `num_rational::Ratio<i64>`, which lets the
/// metrics code produce exact fractions.
pub trait MetricScalar:
    Clone + PartialEq + PartialOrd + Debug + num_traits::Num + FromPrimitive
{
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the metric scalar")
    }
}

impl MetricScalar for f32 {}
impl MetricScalar for f64 {}
impl MetricScalar for num_rational::Ratio<i64> {}
