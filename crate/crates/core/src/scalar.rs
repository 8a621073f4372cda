//! Scalar abstraction over the floating-point element type.
//!
//! Feature storage is 32-bit on disk while every reduction (dot products,
//! log-sum-exp, entropy sums) runs through 64-bit accumulators, so the
//! kernels are written once over [`Scalar`] and instantiated at `f32` for
//! storage and `f64` for the tuning pipeline.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type accepted by the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Copy + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Widen to the 64-bit accumulator type.
#[inline]
pub(crate) fn wide<S: Scalar>(x: S) -> f64 {
    x.to_f64().expect("finite scalar widens to f64")
}

/// Narrow an accumulator value back to the element type.
#[inline]
pub(crate) fn narrow<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 narrows to scalar")
}
