//! Scalar abstraction for the numeric kernels.
//!
//! All floating-point math in this crate (tf-idf weights, token losses,
//! transformer parameters) is generic over [`Scalar`], so the same code runs
//! at `f32` or `f64`. Gradient checks and training default to `f64`; corpus
//! frame features are stored as `f32` and widened at the model boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and counts.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }

    fn from_usize_c(v: usize) -> Self {
        Self::from_usize(v).expect("usize not representable")
    }

    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
