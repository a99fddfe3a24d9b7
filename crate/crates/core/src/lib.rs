//! Market-level joint mode and destination choice for cordon pricing studies.
//!
//! Estimates multinomial, nested and inverse product differentiation logit
//! models from aggregated trip counts, calibrates post-toll preference
//! shifts, and evaluates welfare and compensating transit levers.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64` for ordinary use.

pub mod calibrator;
pub mod compensator;
pub mod data;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod optim;
pub mod params;
pub mod predictor;
pub mod report;
pub mod roots;
pub mod scalar;
pub mod synthgen;
pub mod welfare;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type ParameterSetF64 = params::ParameterSet<f64>;
pub type ParameterSetF32 = params::ParameterSet<f32>;
pub type SegmentParamsF64 = params::SegmentParams<f64>;
pub type ScenarioF64 = predictor::Scenario<f64>;
pub type ScenarioF32 = predictor::Scenario<f32>;
pub type SolverOptionsF64 = predictor::SolverOptions<f64>;
pub type SharesF64 = predictor::Shares<f64>;
pub type PredictionF64 = predictor::Prediction<f64>;
pub type EstimationResultF64 = estimator::EstimationResult<f64>;
pub type CalibrationResultF64 = calibrator::CalibrationResult<f64>;
pub type WelfareReportF64 = welfare::WelfareReport<f64>;
