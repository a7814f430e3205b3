use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,
    #[error("fft size must be 2^q (got {0})")]
    NotPowerOfTwo(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("covariance not PSD on grid (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("covariance not PD")]
    NotPositiveDefinite,
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),
    #[error("kernel narrower than grid (std {std:e} < 2 x spacing {spacing:e})")]
    UnderResolvedKernel { std: f64, spacing: f64 },
    #[error("quadrature did not converge (last change {0:e})")]
    Quadrature(f64),
    #[error("forward overflow in layer {0}")]
    ForwardOverflow(usize),
    #[error("series too short: T = {t} must exceed tau + h = {needed}")]
    SeriesTooShort { t: usize, needed: usize },
    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged { epoch: usize, step: u64 },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that come from numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::TrainingDiverged { .. }
                | Error::ForwardOverflow(_)
                | Error::NotPositiveDefinite
        )
    }
}
