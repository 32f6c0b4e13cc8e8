//! Floating point scalar abstraction shared by every numerical module.

use nalgebra as na;
use num_traits as nt;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Real scalar usable throughout the crate: `f32` or `f64`.
pub trait Real: Copy + nt::FloatConst + nt::ToPrimitive + na::RealField {
    /// Machine epsilon.
    const EPS: Self;

    /// Converts an `f64` literal, rounding when `Self` is narrower.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// One draw from N(0, 1).
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

macro_rules! impl_real {
    ($f:ty) => {
        impl Real for $f {
            const EPS: Self = <$f>::EPSILON;

            #[inline]
            fn lit(v: f64) -> Self {
                v as $f
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
