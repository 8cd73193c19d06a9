//! Normalization, optimization, rolling-origin evaluation and search.

mod adam;
mod cv;
mod fit;
mod scaler;
mod schedule;
mod search;

pub use adam::{Adam, AdamConfig};
pub use cv::{
    cv_splits, evaluate_origin, rolling_origin_cv, CvOrigin, CvResult, CvSplit, Forecaster,
    StannForecaster,
};
pub use fit::{
    checkpoint_scaler, fit, forecast_prices, initialize, FitOutput, TrainConfig, MIN_TRAIN_ROWS,
};
pub use scaler::{iqr_denormalize, iqr_normalize, quantile_sorted, IqrScaler};
pub use schedule::Schedule;
pub use search::{random_search, validation_score, SearchResult, SearchSpace};

#[cfg(test)]
mod tests;
