//! Random hyperparameter search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fit::{fit, forecast_prices, TrainConfig};
use crate::exec::Exec;
use crate::metrics::{self, EvalFrame};
use crate::Error;

/// Ranges sampled uniformly (learning rate log-uniformly).
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub lambda: (f64, f64),
    pub window: (usize, usize),
    pub learning_rate: (f64, f64),
    pub latent_dim: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lambda: (0.01, 1.0),
            window: (252, 756),
            learning_rate: (1e-3, 3e-2),
            latent_dim: vec![4, 8, 16],
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<(), Error> {
        let ok = self.lambda.0 > 0.0
            && self.lambda.0 <= self.lambda.1
            && self.window.0 >= 1
            && self.window.0 <= self.window.1
            && self.learning_rate.0 > 0.0
            && self.learning_rate.0 <= self.learning_rate.1
            && !self.latent_dim.is_empty()
            && self.latent_dim.iter().all(|&d| d > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "search space is empty or inverted".into(),
            ))
        }
    }

    /// Draws one configuration; fields outside the space come from `base`.
    pub fn sample<R: Rng>(&self, base: &TrainConfig, rng: &mut R) -> TrainConfig {
        let (l0, l1) = self.learning_rate;
        TrainConfig {
            lambda: rng.random_range(self.lambda.0..=self.lambda.1),
            train_window: rng.random_range(self.window.0..=self.window.1),
            learning_rate: (rng.random_range(l0.ln()..=l1.ln())).exp(),
            latent_dim: self.latent_dim[rng.random_range(0..self.latent_dim.len())],
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: TrainConfig,
    pub best_score: f64,
    /// Every candidate with its score, in sampling order.
    pub evaluated: Vec<(TrainConfig, f64)>,
}

/// Samples `budget` configurations, scores them and returns the argmin.
/// Ties keep the earliest candidate.
pub fn random_search<F>(
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    objective: F,
    exec: Exec,
) -> Result<SearchResult, Error>
where
    F: Fn(&TrainConfig) -> Result<f64, Error> + Sync + Send,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::InvalidConfig(
            "search budget must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<TrainConfig> = (0..budget).map(|_| space.sample(base, &mut rng)).collect();
    let scores = exec.map(&candidates, |c| objective(c));
    let mut evaluated = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64)> = None;
    for (k, (c, s)) in candidates.into_iter().zip(scores).enumerate() {
        match s {
            Ok(v) if v.is_finite() => {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((k, v));
                }
                evaluated.push((c, v));
            }
            Ok(_) | Err(_) => {
                if let Err(e) = &s {
                    log::warn!("candidate {k} failed: {e}");
                }
                evaluated.push((c, f64::INFINITY));
            }
        }
    }
    let (k, best_score) = best.ok_or_else(|| Error::NonFinite("every search candidate".into()))?;
    Ok(SearchResult {
        best: evaluated[k].0.clone(),
        best_score,
        evaluated,
    })
}

/// Mean MASE over series when holding out the last `tau` rows of `prices`
/// and fitting on the `train_window` rows before them.
pub fn validation_score(
    prices: &[f64],
    n: usize,
    tau: usize,
    cfg: &TrainConfig,
) -> Result<f64, Error> {
    let rows = prices.len() / n.max(1);
    if n == 0 || rows < tau + super::fit::MIN_TRAIN_ROWS {
        return Err(Error::InsufficientData(
            "too few rows for a validation window".into(),
        ));
    }
    let end = rows - tau;
    let start = end.saturating_sub(cfg.train_window);
    let train = &prices[start * n..end * n];
    let out = fit(train, n, cfg, None)?;
    let forecast = forecast_prices(&out.checkpoint, tau)?;
    let actual = &prices[end * n..];
    let col = |v: &[f64], i: usize| v.iter().skip(i).step_by(n).copied().collect::<Vec<f64>>();
    let mut total = 0.0;
    for i in 0..n {
        let (ins, a, f) = (col(train, i), col(actual, i), col(&forecast, i));
        total += metrics::mase(&EvalFrame::new(&ins, &a, &f, 1)?)?;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_is_returned() {
        let base = TrainConfig::default();
        let r = random_search(
            &base,
            &SearchSpace::default(),
            1,
            7,
            |_| Ok(3.0),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(r.evaluated.len(), 1);
        assert_eq!(r.best, r.evaluated[0].0);
        assert!((0.01..=1.0).contains(&r.best.lambda));
    }

    #[test]
    fn best_is_argmin_and_seeded() {
        let base = TrainConfig::default();
        let obj = |c: &TrainConfig| Ok((c.lambda - 0.5).abs());
        let a =
            random_search(&base, &SearchSpace::default(), 20, 3, obj, Exec::Sequential).unwrap();
        let b = random_search(&base, &SearchSpace::default(), 20, 3, obj, Exec::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.evaluated.iter().all(|(_, s)| a.best_score <= *s));
        assert!(
            random_search(&base, &SearchSpace::default(), 0, 3, obj, Exec::Sequential).is_err()
        );
        let empty = SearchSpace {
            latent_dim: vec![],
            ..Default::default()
        };
        assert!(random_search(&base, &empty, 2, 3, obj, Exec::Sequential).is_err());
    }
}
