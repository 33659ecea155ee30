//! Scalar abstraction over the two supported float widths.

use num_traits::Float;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type of every tensor in the crate: `f32` or `f64`.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Type tag used in error messages and file headers.
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;

    /// Gaussian error function, used by the exact-erf GELU.
    fn erf(self) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }
}
