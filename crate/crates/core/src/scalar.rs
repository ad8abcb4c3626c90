//! Scalar abstraction shared by every numerical module.
//!
//! The transforms and the subordination solver only need [`Real`]
//! (`num_traits::Float` plus conversions). Anything that goes through dense
//! linear algebra additionally needs nalgebra's `RealField`, collected in
//! [`LinalgReal`]. Both traits are implemented for `f32` and `f64`.
//!
//! When both bounds are in scope method calls such as `x.sqrt()` are
//! ambiguous, so linear-algebra code spells them as `Float::sqrt(x)`.

use std::fmt::{Debug, Display};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal; every literal used in this crate is
    /// representable (possibly rounded) in both `f32` and `f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `max(floor, factor * eps)`: an absolute tolerance that is `floor` in
    /// double precision but does not drop below rounding level for `f32`.
    #[inline]
    fn tol(floor: f64, factor: f64) -> Self {
        Float::max(Self::lit(floor), Self::lit(factor) * Self::epsilon())
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub trait LinalgReal: Real + nalgebra::RealField {}

impl LinalgReal for f32 {}
impl LinalgReal for f64 {}

#[inline]
pub fn cplx<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
pub fn real<T: Real>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

#[inline]
pub fn imag_unit<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

/// Euclidean norm of a pair of complex numbers.
#[inline]
pub fn norm2<T: Real>(a: Complex<T>, b: Complex<T>) -> T {
    Float::hypot(a.norm(), b.norm())
}
