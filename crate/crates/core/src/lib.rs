//! Spatiotemporal forecasting with adaptive-order attention over learned
//! latent states, plus the baselines, metrics and backtesting used to judge it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actm;
pub mod backtest;
pub mod baselines;
pub mod data;
pub mod diff;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod params;
pub mod train;

use diff::DiffError;

/// Errors returned by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error("relation weights must be nonnegative")]
    NegativeRelation,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("malformed data: {0}")]
    Data(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("series {0} is constant over the training window")]
    ConstantSeries(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Last parameters whose loss was finite.
        last_good: Option<Box<model::Checkpoint>>,
    },
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Diverged { .. }
                | Error::Metric(metrics::MetricError::Undefined(_))
                | Error::Diff(DiffError::NonFinite { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
