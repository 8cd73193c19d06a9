//! Per-series robust scaling by median and interquartile range.

use crate::Error;

/// Quantile of sorted data with linear interpolation between order
/// statistics (position `q·(len-1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct IqrScaler {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
}

impl IqrScaler {
    /// Fits on a row-major `T × n` panel. `names` label errors.
    pub fn fit(values: &[f64], n: usize, names: Option<&[String]>) -> Result<Self, Error> {
        if n == 0 || values.is_empty() || !values.len().is_multiple_of(n) {
            return Err(Error::EmptyInput("normalization input"));
        }
        let mut median = Vec::with_capacity(n);
        let mut iqr = Vec::with_capacity(n);
        for i in 0..n {
            let mut col: Vec<f64> = values.iter().skip(i).step_by(n).copied().collect();
            col.sort_by(f64::total_cmp);
            let spread = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
            if !(spread > 0.0) {
                let name = names
                    .and_then(|s| s.get(i))
                    .cloned()
                    .unwrap_or_else(|| format!("#{i}"));
                return Err(Error::ConstantSeries(name));
            }
            median.push(quantile_sorted(&col, 0.5));
            iqr.push(spread);
        }
        Ok(Self { median, iqr })
    }

    pub fn series(&self) -> usize {
        self.median.len()
    }

    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        let n = self.series();
        values
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.median[k % n]) / self.iqr[k % n])
            .collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        let n = self.series();
        values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.iqr[k % n] + self.median[k % n])
            .collect()
    }
}

/// Fits a scaler and applies it.
pub fn iqr_normalize(values: &[f64], n: usize) -> Result<(Vec<f64>, IqrScaler), Error> {
    let s = IqrScaler::fit(values, n, None)?;
    Ok((s.normalize(values), s))
}

pub fn iqr_denormalize(values: &[f64], scaler: &IqrScaler) -> Vec<f64> {
    scaler.denormalize(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_quartiles() {
        let (x, s) = iqr_normalize(&[1.0, 2.0, 3.0, 4.0, 5.0], 1).unwrap();
        assert_eq!((s.median[0], s.iqr[0]), (3.0, 2.0));
        assert_eq!(x, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn round_trip_and_equivariance() {
        let v = [3.0, 10.0, 1.5, 12.0, 7.0, 30.0, 2.0, 11.0];
        let (x, s) = iqr_normalize(&v, 2).unwrap();
        for (a, b) in s.denormalize(&x).iter().zip(&v) {
            assert!((a - b).abs() < 1e-10);
        }
        let scaled: Vec<f64> = v.iter().map(|x| x * 10.0).collect();
        let (y, s10) = iqr_normalize(&scaled, 2).unwrap();
        assert!((s10.iqr[0] - 10.0 * s.iqr[0]).abs() < 1e-12);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_is_named() {
        let names = vec!["AAA".to_string(), "BBB".to_string()];
        let e = IqrScaler::fit(&[1.0, 5.0, 2.0, 5.0, 3.0, 5.0], 2, Some(&names)).unwrap_err();
        assert!(e.to_string().contains("BBB"));
    }
}
