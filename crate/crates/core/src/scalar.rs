use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point type the likelihood machinery is written against: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics only for types that cannot hold a finite `f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Gradient tolerance that is meaningful at this precision.
    fn default_grad_tol() -> Self {
        Self::lit(1e-8).max(Self::epsilon().powf(Self::lit(0.75)))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Standard normal CDF.
pub fn normal_cdf<S: Scalar>(x: S) -> S {
    let x = x.as_f64();
    S::lit(0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2))
}

/// Upper tail `1 - Φ(x)`, accurate for large positive `x`.
pub fn normal_sf<S: Scalar>(x: S) -> S {
    let x = x.as_f64();
    S::lit(0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2))
}

/// Pairwise (cascade) summation; order is fixed by the input so results are reproducible.
pub fn pairwise_sum<S: Scalar>(xs: &[S]) -> S {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().fold(S::zero(), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
