//! Intra- and inter-series mixing of latent states.
//!
//! For a step `Z_t` (`n × N`) the mixed state is
//! `Z_t Θ0 + Σ_r A_r Z_t Θ_r` where `A_r` is the prior relation matrix `W_r`
//! (plain), `Γ_r ⊙ W_r` (reweighted) or a freely learned `Γ_r` (discovered).

use rand::Rng;

use crate::diff::{DiffError, Graph, Tensor, Var};
use crate::params::{ParamId, ParamStore};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpatialVariant {
    Plain,
    Reweighted,
    Discovered,
}

impl SpatialVariant {
    pub fn name(self) -> &'static str {
        match self {
            SpatialVariant::Plain => "plain",
            SpatialVariant::Reweighted => "reweighted",
            SpatialVariant::Discovered => "discovered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(SpatialVariant::Plain),
            "reweighted" => Some(SpatialVariant::Reweighted),
            "discovered" => Some(SpatialVariant::Discovered),
            _ => None,
        }
    }

    pub fn has_gamma(self) -> bool {
        self != SpatialVariant::Plain
    }
}

/// Parameter handles for the mixing step.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialParams {
    pub variant: SpatialVariant,
    pub theta0: ParamId,
    pub theta: Vec<ParamId>,
    /// One `n × n` matrix per relation; empty for [`SpatialVariant::Plain`].
    pub gamma: Vec<ParamId>,
}

impl SpatialParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        variant: SpatialVariant,
        series: usize,
        latent: usize,
        relations: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (latent.max(1) as f64).sqrt();
        let uniform = |rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R| {
            let d = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
            Tensor::from_raw(vec![rows, cols], d)
        };
        let theta0 = store.push("theta0", uniform(latent, latent, -bound, bound, rng));
        let theta = (0..relations)
            .map(|r| {
                store.push(
                    format!("theta.{r}"),
                    uniform(latent, latent, -bound, bound, rng),
                )
            })
            .collect();
        let gamma = match variant {
            SpatialVariant::Plain => Vec::new(),
            SpatialVariant::Reweighted => (0..relations)
                .map(|r| store.push(format!("gamma.{r}"), Tensor::ones(&[series, series])))
                .collect(),
            SpatialVariant::Discovered => {
                let hi = 1.0 / series.max(1) as f64;
                (0..relations)
                    .map(|r| {
                        store.push(format!("gamma.{r}"), uniform(series, series, 0.0, hi, rng))
                    })
                    .collect()
            }
        };
        Self {
            variant,
            theta0,
            theta,
            gamma,
        }
    }

    pub fn relations(&self) -> usize {
        self.theta.len()
    }

    /// Mixes every block of `n` rows of `z` (`(steps·n) × N`).
    pub fn mix(
        &self,
        g: &mut Graph,
        vars: &[Var],
        prior: &[Var],
        z: Var,
    ) -> Result<Var, DiffError> {
        let mut out = g.matmul(z, vars[self.theta0.index()])?;
        for r in 0..self.relations() {
            let relation = match self.variant {
                SpatialVariant::Plain => prior[r],
                SpatialVariant::Reweighted => g.mul(vars[self.gamma[r].index()], prior[r])?,
                SpatialVariant::Discovered => vars[self.gamma[r].index()],
            };
            let neighbours = g.block_mix(relation, z)?;
            let term = g.matmul(neighbours, vars[self.theta[r].index()])?;
            out = g.add(out, term)?;
        }
        Ok(out)
    }

    /// Keeps `Γ` in the nonnegative orthant.
    pub fn project(&self, store: &mut ParamStore) {
        for &id in &self.gamma {
            for v in store.get_mut(id).data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Per-relation `n × n` matrices of a prior `n × R × n` tensor.
pub fn relation_matrices(prior: &Tensor) -> Result<Vec<Tensor>, Error> {
    let shape = prior.shape();
    if shape.len() != 3 || shape[0] != shape[2] {
        return Err(Error::Dimension(format!(
            "relation tensor must be n × R × n, got {shape:?}"
        )));
    }
    if prior.data().iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeRelation);
    }
    let (n, r_count) = (shape[0], shape[1]);
    Ok((0..r_count)
        .map(|r| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    m[i * n + j] = prior.data()[(i * r_count + r) * n + j];
                }
            }
            Tensor::from_raw(vec![n, n], m)
        })
        .collect())
}

/// Prior relation tensor (`R = 1`) from clamped Pearson correlations between
/// the columns of `x` (`T × n`). Entries below `threshold` are zeroed, the
/// diagonal is zero, and pairs involving a constant column get 0.
pub fn build_relation_tensor(x: &[Vec<f64>], threshold: f64) -> Result<Tensor, Error> {
    let n = x.len();
    let len = x.first().map_or(0, Vec::len);
    if n == 0 || len < 2 || x.iter().any(|c| c.len() != len) {
        return Err(Error::InsufficientData(
            "relation tensor needs at least 2 aligned observations per series".into(),
        ));
    }
    let stats: Vec<(f64, f64)> = x
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / len as f64;
            let ss = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            (mean, ss.sqrt())
        })
        .collect();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let ((mi, si), (mj, sj)) = (stats[i], stats[j]);
            if si == 0.0 || sj == 0.0 {
                if i < j {
                    log::warn!("series {i} or {j} is constant; correlation set to 0");
                }
                continue;
            }
            let cov: f64 = x[i]
                .iter()
                .zip(&x[j])
                .map(|(a, b)| (a - mi) * (b - mj))
                .sum();
            let rho = (cov / (si * sj)).clamp(-1.0, 1.0);
            if rho > 0.0 && rho >= threshold {
                w[i * n + j] = rho;
            }
        }
    }
    Ok(Tensor::from_raw(vec![n, 1, n], w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_opposite_series() {
        let a = vec![1.0, 2.0, 4.0, 3.0];
        let b = a.clone();
        let c: Vec<f64> = a.iter().map(|v| -v).collect();
        let w = build_relation_tensor(&[a, b, c], 0.0).unwrap();
        assert_eq!(w.shape(), &[3, 1, 3]);
        assert!((w.data()[1] - 1.0).abs() < 1e-12);
        assert!((w.data()[3] - 1.0).abs() < 1e-12);
        assert_eq!(w.data()[2], 0.0);
        assert_eq!(w.data()[0], 0.0);
    }

    #[test]
    fn constant_series_gets_zero() {
        let w = build_relation_tensor(&[vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]], 0.0).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_zeroes_weak_links() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let b = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let w = build_relation_tensor(&[a, b], 0.95).unwrap();
        assert_eq!(w.data()[1], 0.0);
    }

    #[test]
    fn negative_prior_is_rejected() {
        let t = Tensor::new(vec![2, 1, 2], vec![0.0, -0.1, 0.2, 0.0]).unwrap();
        assert!(matches!(
            relation_matrices(&t),
            Err(Error::NegativeRelation)
        ));
    }
}
