//! Floating point abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;
use serde::Serialize;

/// Real scalar usable by the potential, flow, classification and grid code.
///
/// Implemented for `f32` and `f64`. Tolerances are written as `f64` literals
/// and pass through [`Real::tol`], which never lets them fall below the
/// type's own resolution.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Debug + Display + Default + Sum + Serialize
{
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn tol(v: f64) -> Self {
        Self::lit(v).max(Self::epsilon() * Self::lit(64.0))
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&xi, &yi)| alpha * xi + yi).collect()
}

pub(crate) fn scale<T: Real>(alpha: T, x: &[T]) -> Vec<T> {
    x.iter().map(|&v| alpha * v).collect()
}

pub(crate) fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub(crate) fn to_f64_vec<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}
