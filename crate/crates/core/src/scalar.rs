use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar accepted by the numeric kernels: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {}
