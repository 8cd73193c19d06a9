//! Scaled forecast accuracy metrics and relative-to-naive reporting.
//!
//! MASE and the per-step errors scale by the mean absolute seasonal
//! difference of the whole observed path (in-sample followed by the horizon
//! actuals). Theil's U is the ratio of the forecast RMSE to the RMSE of
//! persistence at the last in-sample value, so the naive forecast scores
//! exactly one.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("forecast has {forecast} steps but actual has {actual}")]
    HorizonMismatch { actual: usize, forecast: usize },
    #[error("horizon is empty")]
    EmptyHorizon,
    #[error("in-sample length {len} must exceed seasonality {season}")]
    ShortInsample { len: usize, season: usize },
    #[error("{0} is undefined: zero denominator")]
    Undefined(&'static str),
    #[error("no scores for reference model {0:?}")]
    MissingReference(String),
    #[error("scores of {model:?} do not align with the reference")]
    Misaligned { model: String },
}

/// One series' in-sample history, horizon outcomes and forecast.
#[derive(Clone, Copy, Debug)]
pub struct EvalFrame<'a> {
    insample: &'a [f64],
    actual: &'a [f64],
    forecast: &'a [f64],
    season: usize,
}

impl<'a> EvalFrame<'a> {
    pub fn new(
        insample: &'a [f64],
        actual: &'a [f64],
        forecast: &'a [f64],
        season: usize,
    ) -> Result<Self, MetricError> {
        if actual.is_empty() {
            return Err(MetricError::EmptyHorizon);
        }
        if actual.len() != forecast.len() {
            return Err(MetricError::HorizonMismatch {
                actual: actual.len(),
                forecast: forecast.len(),
            });
        }
        if season == 0 || insample.len() <= season {
            return Err(MetricError::ShortInsample {
                len: insample.len(),
                season,
            });
        }
        Ok(Self {
            insample,
            actual,
            forecast,
            season,
        })
    }

    pub fn horizon(&self) -> usize {
        self.actual.len()
    }

    pub fn last_insample(&self) -> f64 {
        *self.insample.last().expect("non-empty in-sample")
    }

    /// Mean absolute season-`s` difference over in-sample then actual values.
    pub fn scale(&self) -> f64 {
        let path: Vec<f64> = self.insample.iter().chain(self.actual).copied().collect();
        let s = self.season;
        let total: f64 = (s..path.len()).map(|j| (path[j] - path[j - s]).abs()).sum();
        total / (path.len() - s) as f64
    }
}

/// Absolute scaled error of every horizon step.
pub fn ipf(frame: &EvalFrame) -> Result<Vec<f64>, MetricError> {
    let scale = frame.scale();
    if scale == 0.0 {
        return Err(MetricError::Undefined("MASE"));
    }
    Ok(frame
        .actual
        .iter()
        .zip(frame.forecast)
        .map(|(a, f)| (a - f).abs() / scale)
        .collect())
}

/// Mean absolute scaled error; the mean of [`ipf`].
pub fn mase(frame: &EvalFrame) -> Result<f64, MetricError> {
    let e = ipf(frame)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

fn rmse(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Forecast RMSE over persistence RMSE.
pub fn theil_u(frame: &EvalFrame) -> Result<f64, MetricError> {
    let last = frame.last_insample();
    let naive = rmse(frame.actual, std::iter::repeat(last));
    if naive == 0.0 {
        return Err(MetricError::Undefined("Theil U"));
    }
    Ok(rmse(frame.actual, frame.forecast.iter().copied()) / naive)
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Fraction of steps whose change from the last in-sample value has the
/// predicted sign. A zero change only matches a zero change.
pub fn mda(frame: &EvalFrame) -> f64 {
    let last = frame.last_insample();
    let hits = frame
        .actual
        .iter()
        .zip(frame.forecast)
        .filter(|(a, f)| sign(*a - last) == sign(*f - last))
        .count();
    hits as f64 / frame.horizon() as f64
}

/// Scores of one model at one (origin, series) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub origin: usize,
    pub series: usize,
    pub mase: f64,
    pub theil_u: f64,
    pub mda: f64,
}

/// Scores a forecast panel. `insample` holds one column per series; `actual`
/// and `forecast` are `horizon × n`, row-major.
pub fn score_panel(
    origin: usize,
    insample: &[Vec<f64>],
    actual: &[f64],
    forecast: &[f64],
) -> Result<Vec<ScoreRow>, MetricError> {
    let n = insample.len();
    if n == 0 || !actual.len().is_multiple_of(n) {
        return Err(MetricError::EmptyHorizon);
    }
    let column = |v: &[f64], i: usize| v.iter().skip(i).step_by(n).copied().collect::<Vec<_>>();
    (0..n)
        .map(|i| {
            let (a, f) = (column(actual, i), column(forecast, i));
            let frame = EvalFrame::new(&insample[i], &a, &f, 1)?;
            Ok(ScoreRow {
                origin,
                series: i,
                mase: mase(&frame)?,
                theil_u: theil_u(&frame)?,
                mda: mda(&frame),
            })
        })
        .collect()
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64;
    (mean, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

/// Per-(origin, series) scores of a model divided by the reference model's;
/// MDA is passed through unscaled.
pub fn relative_rows(
    model: &[ScoreRow],
    reference: &[ScoreRow],
    name: &str,
) -> Result<Vec<ScoreRow>, MetricError> {
    if model.len() != reference.len() {
        return Err(MetricError::Misaligned { model: name.into() });
    }
    model
        .iter()
        .zip(reference)
        .map(|(m, r)| {
            if (m.origin, m.series) != (r.origin, r.series) {
                return Err(MetricError::Misaligned { model: name.into() });
            }
            if r.mase <= 0.0 || r.theil_u <= 0.0 {
                return Err(MetricError::Undefined("relative score"));
            }
            Ok(ScoreRow {
                mase: m.mase / r.mase,
                theil_u: m.theil_u / r.theil_u,
                ..*m
            })
        })
        .collect()
}

/// Aggregated relative scores of one model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeSummary {
    pub model: String,
    pub dataset: String,
    pub origins: usize,
    pub mase_mean: f64,
    pub mase_std: f64,
    pub theil_mean: f64,
    pub theil_std: f64,
    pub mda_mean: f64,
    pub mda_std: f64,
    pub mase_median: f64,
}

fn summarize(model: &str, dataset: &str, rows: &[ScoreRow]) -> RelativeSummary {
    let col = |f: fn(&ScoreRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let mut origins: Vec<usize> = rows.iter().map(|r| r.origin).collect();
    origins.sort_unstable();
    origins.dedup();
    let mase = col(|r| r.mase);
    let (mase_mean, mase_std) = mean_std(&mase);
    let (theil_mean, theil_std) = mean_std(&col(|r| r.theil_u));
    let (mda_mean, mda_std) = mean_std(&col(|r| r.mda));
    RelativeSummary {
        model: model.into(),
        dataset: dataset.into(),
        origins: origins.len(),
        mase_mean,
        mase_std,
        theil_mean,
        theil_std,
        mda_mean,
        mda_std,
        mase_median: median(&mase),
    }
}

/// Relative report across models; `reference` names the naive model.
///
/// Statistics run over every (origin, series) pair. [`per_origin_relative`]
/// gives the coarser per-origin granularity.
pub fn relative_report(
    models: &[(String, Vec<ScoreRow>)],
    reference: &str,
    dataset: &str,
) -> Result<Vec<RelativeSummary>, MetricError> {
    let base = &models
        .iter()
        .find(|(m, _)| m == reference)
        .ok_or_else(|| MetricError::MissingReference(reference.into()))?
        .1;
    models
        .iter()
        .map(|(name, rows)| {
            let rel = relative_rows(rows, base, name)?;
            Ok(summarize(name, dataset, &rel))
        })
        .collect()
}

/// Relative scores averaged over series within each origin.
pub fn per_origin_relative(rows: &[ScoreRow]) -> Vec<ScoreRow> {
    let mut origins: Vec<usize> = rows.iter().map(|r| r.origin).collect();
    origins.sort_unstable();
    origins.dedup();
    origins
        .into_iter()
        .map(|o| {
            let sel: Vec<&ScoreRow> = rows.iter().filter(|r| r.origin == o).collect();
            let k = sel.len() as f64;
            ScoreRow {
                origin: o,
                series: usize::MAX,
                mase: sel.iter().map(|r| r.mase).sum::<f64>() / k,
                theil_u: sel.iter().map(|r| r.theil_u).sum::<f64>() / k,
                mda: sel.iter().map(|r| r.mda).sum::<f64>() / k,
            }
        })
        .collect()
}
