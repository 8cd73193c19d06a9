//! The latent dynamic factor forecaster.
//!
//! Observations `x_0..x_T` (`n` series, `m` features) are explained by free
//! latent states `Z_1..Z_T` (`n × N` each). The decoder maps `Z_t,i` to the
//! variation `x_t,i - x_{t-1},i`; the dynamic factor predicts `Z_{t+1}` from
//! an attention-weighted window of spatially mixed past states.

mod checkpoint;
mod spatial;
mod stack;
pub mod toy;

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::actm::{self, ActmParams};
use crate::diff::{Activation, DiffError, Graph, Tensor, Var};
use crate::params::{ParamId, ParamStore};
use crate::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_HEADER};
pub use spatial::{build_relation_tensor, relation_matrices, SpatialParams, SpatialVariant};
pub use stack::{ResidualStack, StackBlock, StackConfig};

/// Reconstruction error applied per (step, series) sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaKind {
    Mse,
    Mae,
}

impl DeltaKind {
    pub fn name(self) -> &'static str {
        match self {
            DeltaKind::Mse => "mse",
            DeltaKind::Mae => "mae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(DeltaKind::Mse),
            "mae" => Some(DeltaKind::Mae),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the latent dynamics term.
    pub lambda: f64,
    /// Weight of the `l1` penalty on learned relation weights.
    pub gamma: f64,
    pub delta: DeltaKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            gamma: 0.0,
            delta: DeltaKind::Mse,
        }
    }
}

/// Architecture of a [`Stann`] model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub series: usize,
    pub latent_dim: usize,
    pub relations: usize,
    pub features: usize,
    pub max_lag: usize,
    pub kappa: f64,
    pub variant: SpatialVariant,
    pub decoder_stack: StackConfig,
    pub dynamic_stack: StackConfig,
    /// Hidden width of the halting network; `0` means `latent_dim`.
    pub actm_hidden: usize,
    pub h_g: Activation,
    pub h_d: Activation,
}

impl ModelConfig {
    pub fn new(series: usize) -> Self {
        Self {
            series,
            latent_dim: 8,
            relations: 1,
            features: 1,
            max_lag: actm::DEFAULT_MAX_LAG,
            kappa: actm::DEFAULT_KAPPA,
            variant: SpatialVariant::Plain,
            decoder_stack: StackConfig::default(),
            dynamic_stack: StackConfig::default(),
            actm_hidden: 0,
            h_g: Activation::Tanh,
            h_d: Activation::Identity,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.series == 0 || self.latent_dim == 0 || self.features == 0 {
            return Err(Error::InvalidConfig(
                "series, latent_dim and features must be positive".into(),
            ));
        }
        if self.max_lag == 0 {
            return Err(Error::InvalidConfig("max_lag must be at least 1".into()));
        }
        actm::validate_kappa(self.kappa)
    }

    fn actm_width(&self) -> usize {
        if self.actm_hidden == 0 {
            self.latent_dim
        } else {
            self.actm_hidden
        }
    }
}

/// Scalar terms of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `(1/T) Σ_t Σ_i Δ`.
    pub reconstruction: f64,
    /// `(1/T) Σ_t ||Z_{t+1} - g(..)||²`, before `lambda`.
    pub dynamic: f64,
    /// `Σ |Γ|`, before `gamma`.
    pub sparsity: f64,
    /// Number of (step, series) reconstruction samples.
    pub decoder_terms: usize,
}

/// Graph nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub reconstruction: Var,
    pub dynamic: Option<Var>,
    pub sparsity: Option<Var>,
    pub decoder_terms: usize,
}

/// Learned latent states plus decoder, dynamic factor, halting network and
/// spatial mixing.
#[derive(Clone, Debug, PartialEq)]
pub struct Stann {
    config: ModelConfig,
    steps: usize,
    store: ParamStore,
    latent: ParamId,
    spatial: SpatialParams,
    decoder: ResidualStack,
    dynamic: ResidualStack,
    actm: ActmParams,
    prior: Tensor,
    relation_mats: Vec<Tensor>,
}

impl Stann {
    /// Initializes a model for `steps` latent states.
    ///
    /// `seed` drives every parameter except the halting network, which uses
    /// `actm_seed` so the two can be varied independently.
    pub fn new(
        config: ModelConfig,
        steps: usize,
        prior: Tensor,
        seed: u64,
        actm_seed: u64,
    ) -> Result<Self, Error> {
        config.validate()?;
        if steps == 0 {
            return Err(Error::InsufficientData(
                "model needs at least one latent step".into(),
            ));
        }
        let relation_mats = relation_matrices(&prior)?;
        if prior.shape()[0] != config.series || relation_mats.len() != config.relations {
            return Err(Error::Dimension(format!(
                "relation tensor {:?} does not match {} series × {} relations",
                prior.shape(),
                config.series,
                config.relations
            )));
        }
        let (n, width) = (config.series, config.latent_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let z: Vec<f64> = (0..steps * n * width)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let latent = store.push("Z", Tensor::from_raw(vec![steps * n, width], z));
        let spatial = SpatialParams::init(
            &mut store,
            config.variant,
            n,
            width,
            config.relations,
            &mut rng,
        );
        let decoder = ResidualStack::init(
            &mut store,
            "decoder",
            width,
            config.features,
            &config.decoder_stack,
            &mut rng,
        );
        let dynamic = ResidualStack::init(
            &mut store,
            "dynamic",
            width,
            width,
            &config.dynamic_stack,
            &mut rng,
        );
        let mut actm_rng = ChaCha8Rng::seed_from_u64(actm_seed);
        let actm = ActmParams::init(&mut store, width, config.actm_width(), &mut actm_rng);
        Ok(Self {
            config,
            steps,
            store,
            latent,
            spatial,
            decoder,
            dynamic,
            actm,
            prior,
            relation_mats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn latent_id(&self) -> ParamId {
        self.latent
    }

    /// Latent states as `(steps·n) × N`, row `t·n + i`.
    pub fn latents(&self) -> &Tensor {
        self.store.get(self.latent)
    }

    pub fn spatial(&self) -> &SpatialParams {
        &self.spatial
    }

    pub fn actm(&self) -> &ActmParams {
        &self.actm
    }

    pub fn decoder(&self) -> &ResidualStack {
        &self.decoder
    }

    pub fn dynamic(&self) -> &ResidualStack {
        &self.dynamic
    }

    pub fn prior(&self) -> &Tensor {
        &self.prior
    }

    /// Parameter ids grouped by role, for reporting.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let by_prefix = |p: &str| self.store.ids_with_prefix(p).collect::<Vec<_>>();
        let mut groups = vec![
            ("Z", vec![self.latent]),
            ("theta0", vec![self.spatial.theta0]),
            ("thetaR", self.spatial.theta.clone()),
        ];
        if !self.spatial.gamma.is_empty() {
            groups.push(("gamma", self.spatial.gamma.clone()));
        }
        groups.push(("decoder", by_prefix("decoder.")));
        groups.push(("dynamic", by_prefix("dynamic.")));
        groups.push(("actm", by_prefix("actm.")));
        groups
    }

    /// Projects constrained parameters back onto their domain.
    pub fn project(&mut self) {
        self.spatial.project(&mut self.store);
    }

    fn prior_vars(&self, g: &mut Graph) -> Vec<Var> {
        self.relation_mats
            .iter()
            .map(|m| g.constant(m.clone()))
            .collect()
    }

    /// Checks that `x` is `(steps + 1) × n × m` and returns the variation
    /// targets as `(steps·n) × m`.
    fn variation_targets(&self, x: &Tensor) -> Result<Tensor, Error> {
        let (n, m) = (self.config.series, self.config.features);
        if x.rows() != self.steps + 1 || x.cols() != n * m {
            return Err(Error::Dimension(format!(
                "observations {:?} do not match {} steps + 1 of {} series × {} features",
                x.shape(),
                self.steps,
                n,
                m
            )));
        }
        let c = n * m;
        let d = x.data();
        let diffs = (0..self.steps * c).map(|k| d[k + c] - d[k]).collect();
        Ok(Tensor::from_raw(vec![self.steps * n, m], diffs))
    }

    /// Builds the training objective on `g`. `vars` are this model's
    /// parameters registered on `g` (see [`ParamStore::register`]).
    ///
    /// With `steps_subset`, only reconstruction and dynamic terms of those
    /// latent steps enter the loss, normalized by the subset size.
    pub fn loss_nodes(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: &Tensor,
        cfg: &LossConfig,
        steps_subset: Option<&[usize]>,
    ) -> Result<LossNodes, Error> {
        let n = self.config.series;
        let m = self.config.features as f64;
        let steps = self.steps;
        let target = self.variation_targets(x)?;
        if let Some(s) = steps_subset {
            if s.is_empty() || s.iter().any(|&t| t >= steps) {
                return Err(Error::InvalidConfig("invalid latent step subset".into()));
            }
        }
        let rows_of = |ts: &mut dyn Iterator<Item = usize>| -> Vec<usize> {
            ts.flat_map(|t| t * n..(t + 1) * n).collect()
        };
        let z = vars[self.latent.index()];

        let decoded = self.decoder.forward(g, vars, z)?;
        let decoded = g.activate(self.config.h_d, decoded);
        let target = g.constant(target);
        let mut err = g.sub(decoded, target)?;
        if let Some(s) = steps_subset {
            let rows = rows_of(&mut s.iter().copied());
            err = g.gather_rows(err, &rows)?;
        }
        let recon_sum = match cfg.delta {
            DeltaKind::Mse => g.sq_l2(err),
            DeltaKind::Mae => g.l1(err),
        };
        let decoder_terms = g.value(err).rows();
        let scale = 1.0 / steps_subset.map_or(steps, <[usize]>::len) as f64;
        let reconstruction = g.scale(recon_sum, scale / m);
        let mut total = reconstruction;

        let mut dynamic = None;
        if steps >= 2 {
            let prior = self.prior_vars(g);
            let mixed = self.spatial.mix(g, vars, &prior, z)?;
            let halt = self.actm.forward(g, vars, mixed)?;
            let (plan, _) = actm::build_plan(
                g.value(halt).data(),
                n,
                0..steps - 1,
                0,
                self.config.kappa,
                self.config.max_lag,
            );
            let combined = g.budget_combine(halt, mixed, Rc::new(plan))?;
            let pred = self.dynamic.forward(g, vars, combined)?;
            let pred = g.activate(self.config.h_g, pred);
            let next = g.slice_rows(z, n, steps * n)?;
            let mut diff = g.sub(pred, next)?;
            if let Some(s) = steps_subset {
                let rows = rows_of(&mut s.iter().copied().filter(|&t| t + 1 < steps));
                if rows.is_empty() {
                    diff = g.slice_rows(diff, 0, 0)?;
                } else {
                    diff = g.gather_rows(diff, &rows)?;
                }
            }
            let dyn_sum = g.sq_l2(diff);
            let d = g.scale(dyn_sum, scale);
            let weighted = g.scale(d, cfg.lambda);
            total = g.add(total, weighted)?;
            dynamic = Some(d);
        }

        let mut sparsity = None;
        if !self.spatial.gamma.is_empty() {
            let mut acc: Option<Var> = None;
            for id in &self.spatial.gamma {
                let l = g.l1(vars[id.index()]);
                acc = Some(match acc {
                    Some(a) => g.add(a, l)?,
                    None => l,
                });
            }
            let s = acc.expect("at least one relation");
            if cfg.gamma != 0.0 {
                let weighted = g.scale(s, cfg.gamma);
                total = g.add(total, weighted)?;
            }
            sparsity = Some(s);
        }

        Ok(LossNodes {
            total,
            reconstruction,
            dynamic,
            sparsity,
            decoder_terms,
        })
    }

    /// Evaluates the training objective.
    pub fn loss(&self, x: &Tensor, cfg: &LossConfig) -> Result<LossBreakdown, Error> {
        let mut g = Graph::new();
        let vars = self.store.constants(&mut g);
        let nodes = self.loss_nodes(&mut g, &vars, x, cfg, None)?;
        let value = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        let out = LossBreakdown {
            total: g.value(nodes.total).item(),
            reconstruction: g.value(nodes.reconstruction).item(),
            dynamic: value(nodes.dynamic),
            sparsity: value(nodes.sparsity),
            decoder_terms: nodes.decoder_terms,
        };
        if !out.total.is_finite() {
            return Err(Error::NonFinite("model loss".into()));
        }
        Ok(out)
    }

    /// Total energy: unnormalized sum of every decoder and dynamic error term.
    /// Lower means more probable; zero only for a perfect fit.
    pub fn energy(&self, x: &Tensor) -> Result<f64, Error> {
        let m = self.config.features as f64;
        let n = self.config.series;
        let mut g = Graph::new();
        let vars = self.store.constants(&mut g);
        let z = vars[self.latent.index()];
        let target = g.constant(self.variation_targets(x)?);
        let decoded = self.decoder.forward(&mut g, &vars, z)?;
        let decoded = g.activate(self.config.h_d, decoded);
        let err = g.sub(decoded, target)?;
        let mut energy = g.value(err).data().iter().map(|e| e * e).sum::<f64>() / m;
        for t in 0..self.steps.saturating_sub(1) {
            let history: Vec<Tensor> = (0..=t).map(|s| self.latent_step(s)).collect();
            let pred = self.dynamic_step(&history)?;
            let next = self.latent_step(t + 1);
            debug_assert_eq!(next.len(), n * self.config.latent_dim);
            energy += pred
                .data()
                .iter()
                .zip(next.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(energy)
    }

    /// Latent state of step `t` as `n × N`.
    pub fn latent_step(&self, t: usize) -> Tensor {
        let (n, w) = (self.config.series, self.config.latent_dim);
        let z = self.latents();
        Tensor::from_raw(vec![n, w], z.data()[t * n * w..(t + 1) * n * w].to_vec())
    }

    /// Decoded variation of one series' latent vector.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, Error> {
        let w = self.config.latent_dim;
        if z.len() != w {
            return Err(Error::Dimension(format!(
                "latent of width {} decoded by width-{w} decoder",
                z.len()
            )));
        }
        let mut g = Graph::new();
        let vars = self.store.constants(&mut g);
        let x = g.constant(Tensor::matrix(1, w, z.to_vec())?);
        let y = self.decoder.forward(&mut g, &vars, x)?;
        let y = g.activate(self.config.h_d, y);
        Ok(g.value(y).data().to_vec())
    }

    /// Spatially mixed version of one step `Z_t` (`n × N`).
    pub fn mix_spatial(&self, z_t: &Tensor) -> Result<Tensor, Error> {
        self.check_step(z_t)?;
        let mut g = Graph::new();
        let vars = self.store.constants(&mut g);
        let prior = self.prior_vars(&mut g);
        let z = g.constant(z_t.clone());
        let out = self.spatial.mix(&mut g, &vars, &prior, z)?;
        Ok(g.value(out).clone())
    }

    fn check_step(&self, z_t: &Tensor) -> Result<(), Error> {
        let (n, w) = (self.config.series, self.config.latent_dim);
        if z_t.rows() != n || z_t.cols() != w {
            return Err(Error::Dimension(format!(
                "latent step {:?} is not {n} × {w}",
                z_t.shape()
            )));
        }
        Ok(())
    }

    /// Predicts the next latent step from `history` (oldest first).
    pub fn dynamic_step(&self, history: &[Tensor]) -> Result<Tensor, Error> {
        if history.is_empty() {
            return Err(Error::EmptyInput("latent history"));
        }
        let start = history.len().saturating_sub(self.config.max_lag);
        let window = &history[start..];
        let mut rows = Vec::with_capacity(window.len() * window[0].len());
        for z in window {
            self.check_step(z)?;
            rows.extend_from_slice(z.data());
        }
        let mut g = Graph::new();
        let vars = self.store.constants(&mut g);
        let prior = self.prior_vars(&mut g);
        let z = g.constant(Tensor::matrix(
            window.len() * self.config.series,
            self.config.latent_dim,
            rows,
        )?);
        let mixed = self.spatial.mix(&mut g, &vars, &prior, z)?;
        let halt = self.actm.forward(&mut g, &vars, mixed)?;
        let next = self.predict_last(&mut g, &vars, mixed, halt, window.len())?;
        Ok(g.value(next)
            .clone()
            .reshape(vec![self.config.series, self.config.latent_dim])?)
    }

    /// Next state from a window of mixed states whose newest step is last.
    fn predict_last(
        &self,
        g: &mut Graph,
        vars: &[Var],
        mixed: Var,
        halt: Var,
        window_steps: usize,
    ) -> Result<Var, DiffError> {
        let t = window_steps - 1;
        let (plan, _) = actm::build_plan(
            g.value(halt).data(),
            self.config.series,
            t..t + 1,
            0,
            self.config.kappa,
            self.config.max_lag,
        );
        let combined = g.budget_combine(halt, mixed, Rc::new(plan))?;
        let pred = self.dynamic.forward(g, vars, combined)?;
        Ok(g.activate(self.config.h_g, pred))
    }

    /// Halting probability of every mixed training state, row `t·n + i`.
    pub fn halting_values(&self) -> Result<Vec<f64>, Error> {
        let mut g = Graph::new();
        let vars = self.store.constants(&mut g);
        let prior = self.prior_vars(&mut g);
        let z = vars[self.latent.index()];
        let mixed = self.spatial.mix(&mut g, &vars, &prior, z)?;
        let halt = self.actm.forward(&mut g, &vars, mixed)?;
        Ok(g.value(halt).data().to_vec())
    }

    /// Effective autoregressive order chosen at every training step, per series.
    pub fn order_trace(&self) -> Result<Vec<Vec<usize>>, Error> {
        let halt = self.halting_values()?;
        Ok(actm::order_matrix(
            &halt,
            self.config.series,
            self.config.kappa,
            self.config.max_lag,
        ))
    }

    /// Rolls the latent dynamics forward `tau` steps and accumulates decoded
    /// variations from `last_obs` (`n·m` values). Returns `tau × n × m`.
    pub fn forecast(&self, last_obs: &[f64], tau: usize) -> Result<Tensor, Error> {
        let (n, w, m) = (
            self.config.series,
            self.config.latent_dim,
            self.config.features,
        );
        if tau == 0 {
            return Err(Error::InvalidConfig(
                "forecast horizon must be at least 1".into(),
            ));
        }
        if last_obs.len() != n * m {
            return Err(Error::Dimension(format!(
                "last observation has {} values, expected {}",
                last_obs.len(),
                n * m
            )));
        }
        let lag = self.config.max_lag;
        let first = self.steps.saturating_sub(lag);
        let z = self.latents();
        let tail = Tensor::from_raw(
            vec![(self.steps - first) * n, w],
            z.data()[first * n * w..].to_vec(),
        );

        // Mixed states and halting probabilities of the newest `max_lag` steps.
        let (mut mixed, mut halt) = {
            let mut g = Graph::new();
            let vars = self.store.constants(&mut g);
            let prior = self.prior_vars(&mut g);
            let zt = g.constant(tail);
            let mx = self.spatial.mix(&mut g, &vars, &prior, zt)?;
            let h = self.actm.forward(&mut g, &vars, mx)?;
            (g.value(mx).data().to_vec(), g.value(h).data().to_vec())
        };

        let mut level = last_obs.to_vec();
        let mut out = Vec::with_capacity(tau * n * m);
        for _ in 0..tau {
            let window_steps = halt.len() / n;
            let mut g = Graph::new();
            let vars = self.store.constants(&mut g);
            let prior = self.prior_vars(&mut g);
            let mx = g.constant(Tensor::from_raw(vec![window_steps * n, w], mixed.clone()));
            let h = g.constant(Tensor::from_raw(vec![window_steps * n, 1], halt.clone()));
            let next = self.predict_last(&mut g, &vars, mx, h, window_steps)?;

            let var = self.decoder.forward(&mut g, &vars, next)?;
            let var = g.activate(self.config.h_d, var);
            for (l, v) in level.iter_mut().zip(g.value(var).data()) {
                *l += v;
            }
            out.extend_from_slice(&level);

            let mixed_next = self.spatial.mix(&mut g, &vars, &prior, next)?;
            let halt_next = self.actm.forward(&mut g, &vars, mixed_next)?;
            mixed.extend_from_slice(g.value(mixed_next).data());
            halt.extend_from_slice(g.value(halt_next).data());
            if window_steps + 1 > lag {
                mixed.drain(..n * w);
                halt.drain(..n);
            }
        }
        let out = Tensor::new(vec![tau, n, m], out)
            .map_err(|_| Error::NonFinite("forecast trajectory".into()))?;
        Ok(out)
    }
}
