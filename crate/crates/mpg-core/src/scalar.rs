//! Scalar abstraction: the whole engine is generic over the floating-point
//! type. `f64` is the default everywhere (all stated tolerances assume it);
//! `f32` is available for quick low-precision experiments.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by games, policies and solvers.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Absolute tolerance used when validating stored probability rows
    /// (row sums and nonnegativity).
    fn row_tol() -> Self;

    /// Lossless-enough conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal must convert into Scalar")
    }

    /// Conversion from a size (state/action counts).
    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize must convert into Scalar")
    }

    /// Widening conversion used when emitting reports.
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Scalar must convert to f64")
    }
}

impl Scalar for f64 {
    fn row_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn row_tol() -> Self {
        1e-5
    }
}
