//! Cox partial-likelihood inference beyond first order.
//!
//! The numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`, which is what the harness and CLI use.

pub mod error;
pub mod linalg;
pub mod fit;
pub mod hoa;
pub mod bootstrap;
pub mod partial_lik;
pub mod refcensor;
mod scalar;
pub mod survdata;

pub use error::{Error, Result};
pub use partial_lik::{LogLinear, RelativeRiskModel};
pub use scalar::{normal_cdf, normal_sf, pairwise_sum, Scalar};

pub type Matrix = linalg::Matrix<f64>;
pub type SurvivalSample = survdata::SurvivalSample<f64>;
pub type RankData = survdata::RankData<f64>;
pub type HypothesisSpec = fit::HypothesisSpec<f64>;
pub type FitOptions = fit::FitOptions<f64>;
pub type FitResult = fit::FitResult<f64>;
pub type TailPvalues = fit::TailPvalues<f64>;
pub type BootstrapResult = bootstrap::BootstrapResult<f64>;
pub type CovarianceEstimates = hoa::CovarianceEstimates<f64>;
pub type HoaResult = hoa::HoaResult<f64>;
