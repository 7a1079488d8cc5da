//! Floating-point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for series values, network parameters and statistics.
///
/// Implemented for `f32` and `f64`. Everything numeric in this crate is generic
/// over it; the crate root exposes `f64` aliases for the common case.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Short name written into checkpoints.
    const NAME: &'static str;

    /// Lossy conversion from `f64`, used for constants and deserialized values.
    fn of(v: f64) -> Self;

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn logistic(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_at_zero_is_half() {
        assert_eq!(0.0f64.logistic(), 0.5);
        assert_eq!(0.0f32.logistic(), 0.5);
    }

    #[test]
    fn logistic_saturates_without_nan() {
        assert!(Scalar::logistic(-800.0f64) >= 0.0);
        assert_eq!(Scalar::logistic(800.0f64), 1.0);
    }
}
