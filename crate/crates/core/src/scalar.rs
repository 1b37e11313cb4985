use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the numerical modules are generic over.
pub trait Scalar:
    NdFloat + FromPrimitive + Default + Sum + Serialize + DeserializeOwned
{
    /// Lossy conversion from `f64`; used for literals and random draws.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
