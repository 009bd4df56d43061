//! Scalar abstractions.
//!
//! Matrix arithmetic and closed-loop assembly only need [`Scalar`] (a ring with
//! an order), so they also run over exact rationals. Everything that takes a
//! square root, a logarithm or iterates to convergence needs [`Real`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, Num, ToPrimitive};

/// Ring-like element type for dense matrices.
pub trait Scalar: Clone + Num + PartialOrd + Debug {}

impl<T: Clone + Num + PartialOrd + Debug> Scalar for T {}

/// Floating-point scalar used by every numerical routine in the crate.
pub trait Real:
    Scalar
    + Copy
    + Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// A tolerance that is `nominal` for f64 and degrades gracefully for
    /// lower precision types.
    #[inline]
    fn tol(nominal: f64) -> Self {
        Self::lit(nominal).max(Self::epsilon() * Self::lit(1e4))
    }
}

impl Real for f32 {}
impl Real for f64 {}
