//! Floating point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the models, oracles and estimators are generic over.
///
/// Implemented for `f32` and `f64`. Tolerances quoted in the tests
/// (1e-10 residuals and the like) are only attainable in `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self;

    /// Lossy conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Conversion to `f64` for reporting and RNG plumbing.
    fn as_f64(self) -> f64;

    /// Pivot / rank tolerance used by the dense solvers.
    fn solver_tol() -> Self;

    /// Slack allowed when validating probability rows and ranges.
    fn prob_tol() -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $solver:expr, $prob:expr) => {
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
            fn solver_tol() -> Self {
                $solver
            }

            #[inline]
            fn prob_tol() -> Self {
                $prob
            }
        }
    };
}

impl_scalar!(f64, 1e-12, 1e-12);
impl_scalar!(f32, 1e-6, 1e-5);

/// Euclidean inner product.
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

/// Euclidean norm.
pub fn norm<T: Scalar>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Squared Euclidean distance.
pub fn dist_sq<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum()
}
