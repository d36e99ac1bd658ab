//! Variational Bayesian Wishart mixture clustering of polarimetric SAR
//! covariance images, with an inverse-gamma-gamma prior on the number of
//! looks of each cluster and an optional spatially weighted variant.

// `!(x > 0.0)` rejects NaN too; index loops mirror the matrix algebra
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod engine;
pub mod error;
pub mod hermitian;
pub mod igg;
pub mod image;
pub mod init;
pub mod io;
pub mod quad;
pub mod spatial;
pub mod special;
pub mod wishart;

pub use engine::{fit, FitResult, Hyperparameters, LookRateUpdate};
pub use error::{Error, Result};
pub use hermitian::HermitianMatrix;
pub use image::PolsarImage;
pub use special::BesselRatioMode;
