//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the estimators are generic over.
///
/// Implemented for `f32` and `f64`. Numerical floors and finite-difference
/// steps depend on the precision, so they live here rather than as literals.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Smallest entropy value used before taking a logarithm.
    fn entropy_floor() -> Self;
    /// Lower clamp for probabilities inside log terms.
    fn prob_floor() -> Self;
    /// Upper clamp for probabilities inside log terms (strictly below one).
    fn prob_ceil() -> Self;
    /// Relative step for central finite differences.
    fn fd_step() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f64 {
    fn entropy_floor() -> Self {
        1e-300
    }
    fn prob_floor() -> Self {
        1e-300
    }
    fn prob_ceil() -> Self {
        1.0 - 1e-16
    }
    fn fd_step() -> Self {
        1e-6
    }
}

impl Scalar for f32 {
    fn entropy_floor() -> Self {
        1e-37
    }
    fn prob_floor() -> Self {
        1e-37
    }
    fn prob_ceil() -> Self {
        1.0 - 6e-8
    }
    fn fd_step() -> Self {
        5e-3
    }
}

/// Overflow-safe logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(sigmoid(x))` without cancellation in either tail.
#[inline]
pub fn ln_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log(sum(exp(xs)))` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let z = -x.as_f64() / std::f64::consts::SQRT_2;
    T::of(0.5 * libm::erfc(z))
}
