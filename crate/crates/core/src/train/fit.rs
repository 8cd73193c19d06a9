//! Joint optimization of latent states and every factor.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::scaler::IqrScaler;
use super::schedule::Schedule;
use crate::actm;
use crate::diff::{Activation, Graph, Tensor};
use crate::model::{
    build_relation_tensor, Checkpoint, DeltaKind, LossConfig, ModelConfig, SpatialVariant,
    StackConfig, Stann,
};
use crate::Error;

/// Smallest number of observations [`fit`] accepts.
pub const MIN_TRAIN_ROWS: usize = 8;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    /// First warm-restart cycle length in epochs.
    pub scheduler_period: usize,
    pub scheduler_mult: f64,
    pub scheduler_decay: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: DeltaKind,
    pub latent_dim: usize,
    pub max_lag: usize,
    pub kappa: f64,
    pub variant: SpatialVariant,
    /// Rows of history used for fitting; older rows are dropped.
    pub train_window: usize,
    pub seed: u64,
    /// Seed of the halting network; derived from `seed` when absent.
    pub actm_seed: Option<u64>,
    /// Correlations below this are dropped from the prior relations.
    pub relation_threshold: f64,
    pub decoder_stack: StackConfig,
    pub dynamic_stack: StackConfig,
    pub actm_hidden: usize,
    pub h_g: Activation,
    pub h_d: Activation,
    /// Latent steps per optimizer step; `None` for full batch.
    pub batch_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.01,
            lr_min: 0.0005,
            adam: AdamConfig::default(),
            scheduler_period: 100,
            scheduler_mult: 2.0,
            scheduler_decay: 1.0,
            lambda: 0.01,
            gamma: 0.0,
            delta: DeltaKind::Mse,
            latent_dim: 8,
            max_lag: actm::DEFAULT_MAX_LAG,
            kappa: actm::DEFAULT_KAPPA,
            variant: SpatialVariant::Plain,
            train_window: 504,
            seed: 0,
            actm_seed: None,
            relation_threshold: 0.0,
            decoder_stack: StackConfig::default(),
            dynamic_stack: StackConfig::default(),
            actm_hidden: 0,
            h_g: Activation::Tanh,
            h_d: Activation::Identity,
            batch_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0) || !(self.lr_min >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.lambda > 0.0) || !(self.gamma >= 0.0) {
            return bad("lambda must be > 0 and gamma ≥ 0".into());
        }
        if self.latent_dim == 0 || self.max_lag == 0 || self.scheduler_period == 0 {
            return bad("latent_dim, max_lag and scheduler_period must be positive".into());
        }
        if self.train_window < MIN_TRAIN_ROWS {
            return bad(format!("train_window must be at least {MIN_TRAIN_ROWS}"));
        }
        if self.batch_steps == Some(0) {
            return bad("batch_steps must be positive".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon be positive".into());
        }
        actm::validate_kappa(self.kappa)
    }

    pub fn actm_seed(&self) -> u64 {
        self.actm_seed.unwrap_or(self.seed ^ 0x9e37_79b9_7f4a_7c15)
    }

    pub fn model_config(&self, series: usize) -> ModelConfig {
        ModelConfig {
            series,
            latent_dim: self.latent_dim,
            relations: 1,
            features: 1,
            max_lag: self.max_lag,
            kappa: self.kappa,
            variant: self.variant,
            decoder_stack: self.decoder_stack,
            dynamic_stack: self.dynamic_stack,
            actm_hidden: self.actm_hidden,
            h_g: self.h_g,
            h_d: self.h_d,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            gamma: self.gamma,
            delta: self.delta,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            lr_max: self.learning_rate,
            lr_min: self.lr_min.min(self.learning_rate),
            period: self.scheduler_period,
            period_mult: self.scheduler_mult,
            decay: self.scheduler_decay,
        }
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct FitOutput {
    pub checkpoint: Checkpoint,
    /// Training loss after `e` epochs, for `e = 0..=epochs`.
    pub loss_curve: Vec<f64>,
}

/// Rebuilds the normalization stored in a checkpoint.
pub fn checkpoint_scaler(ck: &Checkpoint) -> IqrScaler {
    IqrScaler {
        median: ck.center.clone(),
        iqr: ck.spread.clone(),
    }
}

/// Forecast in original units, `tau × n` row-major.
pub fn forecast_prices(ck: &Checkpoint, tau: usize) -> Result<Vec<f64>, Error> {
    let f = ck.model.forecast(&ck.last_obs, tau)?;
    Ok(checkpoint_scaler(ck).denormalize(f.data()))
}

fn checkpoint(
    model: &Stann,
    scaler: &IqrScaler,
    last: &[f64],
    epochs: usize,
    delta: DeltaKind,
) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        center: scaler.median.clone(),
        spread: scaler.iqr.clone(),
        last_obs: last.to_vec(),
        epochs_trained: epochs,
        delta,
    }
}

/// Builds the initial model for a row-major `T × n` price panel, fitting the
/// scaler and prior relations on the same rows.
pub fn initialize(
    prices: &[f64],
    n: usize,
    cfg: &TrainConfig,
    names: Option<&[String]>,
) -> Result<(Stann, IqrScaler, Tensor), Error> {
    cfg.validate()?;
    if n == 0 || !prices.len().is_multiple_of(n) {
        return Err(Error::Dimension(
            "prices are not a whole number of rows".into(),
        ));
    }
    let rows = prices.len() / n;
    if rows < MIN_TRAIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "training needs at least {MIN_TRAIN_ROWS} rows, got {rows}"
        )));
    }
    if let Some(k) = prices.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite price at row {}", k / n)));
    }
    let scaler = IqrScaler::fit(prices, n, names)?;
    let x = scaler.normalize(prices);
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|i| x.iter().skip(i).step_by(n).copied().collect())
        .collect();
    let prior = build_relation_tensor(&columns, cfg.relation_threshold)?;
    let model = Stann::new(
        cfg.model_config(n),
        rows - 1,
        prior,
        cfg.seed,
        cfg.actm_seed(),
    )?;
    let x = Tensor::new(vec![rows, n], x)?;
    Ok((model, scaler, x))
}

/// Trains on a row-major `T × n` price panel (all rows are used).
pub fn fit(
    prices: &[f64],
    n: usize,
    cfg: &TrainConfig,
    names: Option<&[String]>,
) -> Result<FitOutput, Error> {
    let (mut model, scaler, x) = initialize(prices, n, cfg, names)?;
    let last = x.data()[x.len() - n..].to_vec();
    let loss_cfg = cfg.loss_config();
    let schedule = cfg.schedule();
    let mut opt = Adam::new(cfg.adam, model.store().tensors());
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let steps = model.steps();
    let mut order: Vec<usize> = (0..steps).collect();

    let diverged = |epoch: usize, good: &Stann| Error::Diverged {
        epoch,
        last_good: Some(Box::new(checkpoint(good, &scaler, &last, epoch, cfg.delta))),
    };

    let minibatch = cfg.batch_steps.is_some_and(|b| b < steps);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut start_loss = None;
        let batches: Vec<Option<&[usize]>> = if minibatch {
            start_loss = Some(
                model
                    .loss(&x, &loss_cfg)
                    .map_err(|_| diverged(epoch, &model))?
                    .total,
            );
            order.shuffle(&mut shuffle);
            order
                .chunks(cfg.batch_steps.unwrap_or(steps))
                .map(Some)
                .collect()
        } else {
            vec![None]
        };
        for subset in batches {
            let mut g = Graph::new();
            let vars = model.store().register(&mut g);
            let nodes = model.loss_nodes(&mut g, &vars, &x, &loss_cfg, subset)?;
            let value = g.value(nodes.total).item();
            if !value.is_finite() {
                return Err(diverged(epoch, &model));
            }
            if subset.is_none() {
                start_loss = Some(value);
            }
            g.backward(nodes.total)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .zip(model.store().tensors())
                .map(|(&v, p)| {
                    g.grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.shape()))
                })
                .collect();
            // A rejected step leaves the parameters untouched.
            if opt
                .step(model.store_mut().tensors_mut(), &grads, lr)
                .is_err()
            {
                return Err(diverged(epoch, &model));
            }
            model.project();
        }
        let loss = start_loss.expect("every epoch evaluates the loss");
        log::debug!("epoch {epoch}: loss {loss:.6e}, lr {lr:.3e}");
        curve.push(loss);
    }
    let final_loss = model
        .loss(&x, &loss_cfg)
        .map_err(|_| diverged(cfg.epochs, &model))?;
    curve.push(final_loss.total);
    Ok(FitOutput {
        checkpoint: checkpoint(&model, &scaler, &last, cfg.epochs, cfg.delta),
        loss_curve: curve,
    })
}
