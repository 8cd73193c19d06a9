//! Naive persistence and per-series autoregressive baselines.

use nalgebra::{DMatrix, DVector};

use crate::train::Forecaster;
use crate::Error;

/// Largest order tried by [`select_ar_order`].
pub const MAX_AR_ORDER: usize = 10;
const RIDGE: f64 = 1e-8;

/// Repeats the last row of a row-major `T × n` panel `tau` times.
pub fn naive_forecast(history: &[f64], n: usize, tau: usize) -> Result<Vec<f64>, Error> {
    if n == 0 || history.len() < n {
        return Err(Error::EmptyInput("history"));
    }
    let last = &history[history.len() - n..];
    Ok(last.repeat(tau))
}

/// `x_t = Σ_k a_k x_{t-k} + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArModel {
    /// `a_1..a_l`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl ArModel {
    pub fn lag(&self) -> usize {
        self.coefficients.len()
    }
}

/// Least-squares fit of `x[t]` on `x[t-1..t-l]` and a constant, using the
/// targets `x[start..]` (`start ≥ l`).
fn ols(x: &[f64], l: usize, start: usize) -> (ArModel, f64) {
    let rows = x.len() - start;
    if x.iter().all(|&v| v == x[0]) {
        let model = ArModel {
            coefficients: vec![0.0; l],
            intercept: x[0],
        };
        return (model, 0.0);
    }
    let design = DMatrix::from_fn(
        rows,
        l + 1,
        |r, c| if c < l { x[start + r - 1 - c] } else { 1.0 },
    );
    let target = DVector::from_iterator(rows, x[start..].iter().copied());
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &target;
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => {
            log::warn!("singular normal equations for AR({l}); adding ridge {RIDGE}");
            let ridged = xtx + DMatrix::identity(l + 1, l + 1) * RIDGE;
            match ridged.cholesky() {
                Some(ch) => ch.solve(&xty),
                None => DVector::zeros(l + 1),
            }
        }
    };
    let rss = (&design * &beta - &target).norm_squared();
    let model = ArModel {
        coefficients: beta.iter().take(l).copied().collect(),
        intercept: beta[l],
    };
    (model, rss)
}

/// Ordinary least squares AR(`l`) fit.
pub fn ar_fit(x: &[f64], l: usize) -> Result<ArModel, Error> {
    if x.len() < 2 * l + 2 {
        return Err(Error::InsufficientData(format!(
            "AR({l}) needs at least {} points, got {}",
            2 * l + 2,
            x.len()
        )));
    }
    Ok(ols(x, l, l).0)
}

/// Akaike criterion of AR(`l`) fitted on the targets `x[start..]`.
fn aic(x: &[f64], l: usize, start: usize) -> f64 {
    let (_, rss) = ols(x, l, start);
    let m = (x.len() - start) as f64;
    m * (rss.max(f64::MIN_POSITIVE) / m).ln() + 2.0 * (l + 1) as f64
}

/// Order in `1..=max_order` minimizing AIC on a common sample.
pub fn select_ar_order(x: &[f64], max_order: usize) -> Result<usize, Error> {
    let usable = (1..=max_order).filter(|&l| x.len() >= 2 * l + 2).max();
    let top = usable.ok_or_else(|| Error::InsufficientData("too short for AR(1)".into()))?;
    let mut best = (1, f64::INFINITY);
    for l in 1..=top {
        let a = aic(x, l, top);
        if a < best.1 {
            best = (l, a);
        }
    }
    Ok(best.0)
}

/// Iterates the fitted recursion `tau` steps past `history`.
pub fn ar_forecast(model: &ArModel, history: &[f64], tau: usize) -> Result<Vec<f64>, Error> {
    let l = model.lag();
    if history.len() < l.max(1) {
        return Err(Error::InsufficientData(format!(
            "AR({l}) forecast needs {l} past values"
        )));
    }
    let mut path = history[history.len() - l..].to_vec();
    let mut out = Vec::with_capacity(tau);
    for _ in 0..tau {
        let k = path.len();
        let next = model.intercept
            + model
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, a)| a * path[k - 1 - j])
                .sum::<f64>();
        path.push(next);
        out.push(next);
    }
    Ok(out)
}

/// Persistence baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct Naive;

impl Forecaster for Naive {
    fn name(&self) -> &str {
        "naive"
    }

    fn forecast(&self, history: &[f64], n: usize, tau: usize) -> Result<Vec<f64>, Error> {
        naive_forecast(history, n, tau)
    }
}

/// Independent AR model per series; order by AIC unless fixed.
#[derive(Clone, Copy, Debug, Default)]
pub struct Autoregressive {
    pub order: Option<usize>,
}

impl Forecaster for Autoregressive {
    fn name(&self) -> &str {
        "ar"
    }

    fn forecast(&self, history: &[f64], n: usize, tau: usize) -> Result<Vec<f64>, Error> {
        if n == 0 || !history.len().is_multiple_of(n) {
            return Err(Error::Dimension(
                "history is not a whole number of rows".into(),
            ));
        }
        let mut out = vec![0.0; tau * n];
        for i in 0..n {
            let x: Vec<f64> = history.iter().skip(i).step_by(n).copied().collect();
            let l = match self.order {
                Some(l) => l,
                None => select_ar_order(&x, MAX_AR_ORDER)?,
            };
            let model = ar_fit(&x, l)?;
            for (h, v) in ar_forecast(&model, &x, tau)?.into_iter().enumerate() {
                out[h * n + i] = v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_repeats_last_row() {
        let f = naive_forecast(&[1.0, 2.0, 3.0, 4.0], 2, 3).unwrap();
        assert_eq!(f, vec![3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
        assert!(naive_forecast(&[], 2, 3).is_err());
    }

    #[test]
    fn recovers_noiseless_coefficient() {
        let x: Vec<f64> = (0..50).map(|t| 5.0 * 0.8f64.powi(t)).collect();
        let m = ar_fit(&x, 1).unwrap();
        assert!((m.coefficients[0] - 0.8).abs() < 1e-6);
        assert!(m.intercept.abs() < 1e-6);
    }

    #[test]
    fn order_zero_is_the_mean() {
        let x = [1.0, 3.0, 2.0, 6.0];
        let m = ar_fit(&x, 0).unwrap();
        assert!((m.intercept - 3.0).abs() < 1e-12);
        assert_eq!(ar_forecast(&m, &x, 2).unwrap().len(), 2);
    }

    #[test]
    fn constant_series_is_reproduced() {
        let x = [4.2; 30];
        let m = ar_fit(&x, 3).unwrap();
        assert_eq!(ar_forecast(&m, &x, 5).unwrap(), vec![4.2; 5]);
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(ar_fit(&[1.0, 2.0, 3.0, 5.0], 1).is_ok());
        assert!(ar_fit(&[1.0, 2.0, 3.0], 1).is_err());
    }
}
