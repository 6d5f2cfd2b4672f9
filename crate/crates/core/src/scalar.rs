// SPDX-License-Identifier: MIT OR Apache-2.0

//! Floating-point abstraction shared by the numeric kernels.
//!
//! Everything that does arithmetic is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Sampling hooks live on the trait so that
//! generic code never needs `where StandardNormal: Distribution<T>` bounds.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, NumCast, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Real scalar used throughout the crate: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumCast
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
    /// Lossy conversion from `f64`; used for literals.
    fn of(x: f64) -> Self;

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    fn as_f64(self) -> f64;

    /// One standard normal draw.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from Gamma(shape, scale = 1).
    fn sample_unit_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;

    /// One draw uniform on [0, 1).
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                <StandardNormal as Distribution<$t>>::sample(&StandardNormal, rng)
            }

            fn sample_unit_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
                Gamma::<$t>::new(shape, 1.0)
                    .expect("gamma shape must be positive and finite")
                    .sample(rng)
            }

            #[inline]
            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_of_gamma<T: Scalar>(shape: T) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        (0..n)
            .map(|_| T::sample_unit_gamma(shape, &mut rng).as_f64())
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn gamma_hook_has_unit_scale() {
        assert!((mean_of_gamma(4.0f64) - 4.0).abs() < 0.1);
        assert!((mean_of_gamma(4.0f32) - 4.0).abs() < 0.1);
    }

    #[test]
    fn conversions() {
        assert_eq!(f32::of(0.5), 0.5f32);
        assert_eq!(f64::of_usize(7), 7.0);
    }
}
