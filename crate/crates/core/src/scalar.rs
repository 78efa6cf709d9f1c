//! Floating-point scalar abstraction.
//!
//! The tensor containers and the pure math built on them (DFT matrices,
//! window functions, pooling, loss kernels) are generic over the element
//! type so the same code instantiates at `f32` or `f64`. The pipeline
//! itself runs on the `f64` aliases exported from the crate root; gradient
//! checks need the headroom.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type for tensor math: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; the constant sites in this crate all
    /// stay well inside `f32` range.
    fn from_f64_c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
