//! Penalized optimal scaling for ordinal variables.
//!
//! Ordinal variables carry category labels `1..k` that are ordered but not
//! metric. This crate assigns numeric scores ("quantifications") to those
//! labels so that a fixed number `m` of principal components explains as much
//! variance as possible, with a second-order difference penalty on the score
//! vectors. The penalty weight `lambda` interpolates between unpenalized
//! optimal scaling (`lambda -> 0`) and ordinary linear PCA on the standardized
//! labels (`lambda -> inf`).
//!
//! The pieces:
//! * [`data`]: ordinal data ingestion, indicator matrices, standardization;
//! * [`linalg`]: thin SVD, PCA, variance accounted for (VAF);
//! * [`qp`]: dual active-set solver for strictly convex QPs;
//! * [`scaling`]: difference penalties, the quantification step, and the
//!   alternating least squares fit;
//! * [`select`]: cross-validated and training-path selection of `lambda`,
//!   scree spectra over `m`;
//! * [`sim`]: latent-factor simulation study with shape-specific
//!   discretization.
//!
//! All numeric code is generic over the scalar type via [`Scalar`]
//! (`f32` or `f64`); the aliases below pin the common double-precision case.

pub mod data;
pub mod error;
pub mod linalg;
pub mod qp;
pub mod scaling;
pub mod select;
pub mod sim;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision PCA solution.
pub type PcaSolutionF64 = linalg::PcaSolution<f64>;
/// Double-precision ALS fit result.
pub type FitResultF64 = scaling::FitResult<f64>;
/// Double-precision cross-validation result.
pub type CvResultF64 = select::CvResult<f64>;
/// Double-precision training VAF path.
pub type VafPathF64 = select::VafPath<f64>;
