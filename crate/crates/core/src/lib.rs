//! Fourier neural operators for dynamical spatio-temporal forecasting with
//! heteroscedastic Gaussian uncertainty.

pub mod burgers;
pub mod config;
pub mod error;
pub mod eval;
pub mod fno;
pub mod format;
pub mod green;
pub mod likelihood;
pub mod linalg;
pub mod rng;
pub mod selftest;
pub mod special;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use fno::{Fno, FnoConfig, FnoParams, HistoryWindow};
pub use likelihood::{CovParams, ForecastDist};
pub use spectral::{ComplexTensor, RealTensor};
