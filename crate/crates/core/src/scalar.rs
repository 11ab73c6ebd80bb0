//! Floating point abstraction shared by the likelihood machinery.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar used by the basis, the base distributions and the transformation
/// model. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    /// Conversion to `f64` for routines that are only implemented in double precision.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Default absolute gradient tolerance for the optimizer at this precision.
    fn default_grad_tol() -> Self;
}

impl Scalar for f64 {
    fn default_grad_tol() -> Self {
        1e-6
    }
}

impl Scalar for f32 {
    fn default_grad_tol() -> Self {
        1e-3
    }
}

/// `ln(1 - exp(x))` for `x <= 0`.
pub(crate) fn log1mexp<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        return T::neg_infinity();
    }
    if x > -T::LN_2() {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(1 + exp(x))` without overflow.
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
