//! Scalar abstraction shared by every numerical kernel.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point type the solver can run on.
///
/// Implemented for `f32` and `f64`. Tolerances quoted throughout the crate
/// (1e-10, 1e-12, ...) are `f64` figures; single precision runs are useful
/// for smoke tests and profiling only.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Default
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the target cannot
    /// represent finite values at all (never for `f32`/`f64`).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Relative round-off scale used when comparing quantities that are
    /// equal in exact arithmetic.
    #[inline]
    fn roundoff() -> Self {
        Self::epsilon() * Self::lit(1.0e3)
    }
}

impl Real for f32 {}
impl Real for f64 {}
