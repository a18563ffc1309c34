//! Scalar abstraction: everything numeric in this crate is generic over [`Real`],
//! implemented for `f32` and `f64`. Concrete `f64` aliases live at the crate root.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Draw a standard-normal variate from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion from `f64` for constants; panics only on
    /// values unrepresentable in the target type (never for ordinary literals).
    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}
