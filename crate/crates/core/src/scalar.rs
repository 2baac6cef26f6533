//! Scalar abstractions.
//!
//! The network stack is written against [`Scalar`], which is implemented for
//! `f32` and `f64`. Metrics only need field arithmetic and are written against
//! [`MetricScalar`], which additionally admits exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating-point element type of tensors, gradients and optimizer state.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossless-where-possible conversion from `f64`. Panics only if `v`
    /// cannot be represented at all, which does not happen for `f32`/`f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic needed by the evaluation metrics: exact for rationals,
/// approximate for floats.
pub trait MetricScalar: Num + FromPrimitive + Copy + PartialOrd + Debug {
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }
}

impl<T: Num + FromPrimitive + Copy + PartialOrd + Debug> MetricScalar for T {}
