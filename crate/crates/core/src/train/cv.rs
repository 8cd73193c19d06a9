//! Rolling-origin evaluation.

use std::ops::Range;

use super::fit::{fit, forecast_prices, TrainConfig};
use crate::exec::Exec;
use crate::metrics::{self, EvalFrame, ScoreRow};
use crate::Error;

/// A panel forecaster that is refit from scratch at every origin.
pub trait Forecaster: Sync {
    fn name(&self) -> &str;

    /// Forecasts `tau` rows past a row-major `T × n` history; `tau × n` out.
    fn forecast(&self, history: &[f64], n: usize, tau: usize) -> Result<Vec<f64>, Error>;
}

/// The adaptive latent model, fitted on the given history.
#[derive(Clone, Debug, PartialEq)]
pub struct StannForecaster {
    pub config: TrainConfig,
    pub name: String,
}

impl StannForecaster {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            name: "stann".into(),
        }
    }
}

impl Forecaster for StannForecaster {
    fn name(&self) -> &str {
        &self.name
    }

    fn forecast(&self, history: &[f64], n: usize, tau: usize) -> Result<Vec<f64>, Error> {
        let out = fit(history, n, &self.config, None)?;
        forecast_prices(&out.checkpoint, tau)
    }
}

/// One evaluation origin: train on `train`, forecast `test`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CvSplit {
    pub origin: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Origins `len - tau·(k..0)`, each trained on the preceding `window` rows.
pub fn cv_splits(
    len: usize,
    window: usize,
    tau: usize,
    n_origins: usize,
) -> Result<Vec<CvSplit>, Error> {
    if tau == 0 || n_origins == 0 || window == 0 {
        return Err(Error::InvalidConfig(
            "tau, origins and window must be positive".into(),
        ));
    }
    let need = window + tau * n_origins;
    if len < need {
        return Err(Error::InsufficientData(format!(
            "{n_origins} origins of {tau} steps after a {window}-row window need {need} rows, got {len}"
        )));
    }
    Ok((0..n_origins)
        .map(|k| {
            let origin = len - tau * (n_origins - k);
            CvSplit {
                origin,
                train: origin - window..origin,
                test: origin..origin + tau,
            }
        })
        .collect())
}

/// Forecast, outcome and scores at one origin.
#[derive(Clone, Debug, PartialEq)]
pub struct CvOrigin {
    pub split: CvSplit,
    /// `tau × n` row-major.
    pub forecast: Vec<f64>,
    pub actual: Vec<f64>,
    pub scores: Vec<ScoreRow>,
    /// Per-step scaled errors, `[series][step]`.
    pub ipf: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub model: String,
    pub origins: Vec<CvOrigin>,
}

impl CvResult {
    pub fn scores(&self) -> Vec<ScoreRow> {
        self.origins
            .iter()
            .flat_map(|o| o.scores.iter().copied())
            .collect()
    }
}

/// Scores a forecast of `split.test` against `prices`.
pub fn evaluate_origin(
    prices: &[f64],
    n: usize,
    split: &CvSplit,
    forecast: Vec<f64>,
) -> Result<CvOrigin, Error> {
    let tau = split.test.len();
    if forecast.len() != tau * n {
        return Err(Error::Dimension(format!(
            "forecast has {} values, expected {}",
            forecast.len(),
            tau * n
        )));
    }
    let rows = |r: &Range<usize>| prices[r.start * n..r.end * n].to_vec();
    let train = rows(&split.train);
    let actual = rows(&split.test);
    let col = |v: &[f64], i: usize| v.iter().skip(i).step_by(n).copied().collect::<Vec<f64>>();
    let insample: Vec<Vec<f64>> = (0..n).map(|i| col(&train, i)).collect();
    let scores = metrics::score_panel(split.origin, &insample, &actual, &forecast)?;
    let ipf = (0..n)
        .map(|i| {
            let (a, f) = (col(&actual, i), col(&forecast, i));
            metrics::ipf(&EvalFrame::new(&insample[i], &a, &f, 1)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvOrigin {
        split: split.clone(),
        forecast,
        actual,
        scores,
        ipf,
    })
}

/// Fits and scores `model` at every origin. Origins run as independent jobs.
pub fn rolling_origin_cv(
    prices: &[f64],
    n: usize,
    model: &dyn Forecaster,
    window: usize,
    tau: usize,
    n_origins: usize,
    exec: Exec,
) -> Result<CvResult, Error> {
    if n == 0 || !prices.len().is_multiple_of(n) {
        return Err(Error::Dimension(
            "prices are not a whole number of rows".into(),
        ));
    }
    let splits = cv_splits(prices.len() / n, window, tau, n_origins)?;
    let origins = exec.try_map_range(splits.len(), |k| {
        let s = &splits[k];
        let history = &prices[s.train.start * n..s.train.end * n];
        let forecast = model.forecast(history, n, tau)?;
        evaluate_origin(prices, n, s, forecast)
    })?;
    Ok(CvResult {
        model: model.name().to_string(),
        origins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Naive;

    #[test]
    fn splits_are_disjoint_and_in_bounds() {
        let s = cv_splits(100, 30, 10, 3).unwrap();
        assert_eq!(
            s.iter().map(|x| x.origin).collect::<Vec<_>>(),
            vec![70, 80, 90]
        );
        for x in &s {
            assert_eq!(x.train.end, x.test.start);
            assert!(x.test.end <= 100);
        }
        assert_eq!(cv_splits(40, 30, 10, 1).unwrap()[0].train, 0..30);
        assert!(cv_splits(39, 30, 10, 1).is_err());
    }

    #[test]
    fn naive_scores_unit_theil() {
        let prices: Vec<f64> = (0..60)
            .map(|k| 1.0 + (k as f64 * 0.7).sin().abs() + k as f64)
            .collect();
        let r = rolling_origin_cv(&prices, 2, &Naive, 10, 5, 2, Exec::Sequential).unwrap();
        assert_eq!(r.origins.len(), 2);
        assert!(r.scores().iter().all(|s| s.theil_u == 1.0 && s.mda == 0.0));
    }
}
