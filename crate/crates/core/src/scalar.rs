//! Floating-point abstraction shared by the numerical kernels.
//!
//! Clustering, lasso, the additive model and the metrics are written against
//! [`Scalar`] so they run in `f32` or `f64`. The tabular layer and the pipeline
//! are fixed to `f64`; see the aliases in the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal, rounding when `Self` is narrower.
    fn lit(v: f64) -> Self;

    fn of_usize(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
}

/// Population mean and standard deviation of a column.
pub(crate) fn mean_std<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let mut n = 0usize;
    let mut sum = T::zero();
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let mean = sum / T::of_usize(n);
    let mut ss = T::zero();
    for v in values {
        let d = v - mean;
        ss += d * d;
    }
    (mean, (ss / T::of_usize(n)).sqrt())
}
