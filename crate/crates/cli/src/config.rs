//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stann::backtest::{Annualization, Strategy};
use stann::data::MissingPolicy;
use stann::diff::Activation;
use stann::model::{DeltaKind, SpatialVariant, StackConfig};
use stann::train::{AdamConfig, TrainConfig};
use toml::{Table, Value};

use crate::CliError;

/// Every setting of a run. Keys missing from the file take these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Label written into metric reports.
    pub dataset: Option<String>,
    pub variant: String,
    pub tau: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub missing: String,
    pub strategy: String,
    /// Annual risk-free rate, or a CSV `date,rate` of annual rates.
    pub rf: String,
    pub annualization: String,
    pub origins: usize,

    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub scheduler_period: usize,
    pub scheduler_mult: f64,
    pub scheduler_decay: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: String,
    pub latent_dim: usize,
    pub max_lag: usize,
    pub kappa: f64,
    pub train_window: usize,
    pub actm_seed: Option<u64>,
    pub relation_threshold: f64,
    pub decoder_blocks: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub decoder_residual: bool,
    pub dynamic_blocks: usize,
    pub dynamic_layers: usize,
    pub dynamic_width: usize,
    pub dynamic_residual: bool,
    pub actm_hidden: usize,
    pub h_g: String,
    pub h_d: String,
    pub batch_steps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: None,
            dataset: None,
            variant: "stann".into(),
            tau: 21,
            seed: t.seed,
            out: PathBuf::from("out"),
            missing: MissingPolicy::Reject.name().into(),
            strategy: Strategy::Simple.name().into(),
            rf: "0".into(),
            annualization: Annualization::Conventional.name().into(),
            origins: 5,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_min: t.lr_min,
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_epsilon: t.adam.epsilon,
            scheduler_period: t.scheduler_period,
            scheduler_mult: t.scheduler_mult,
            scheduler_decay: t.scheduler_decay,
            lambda: t.lambda,
            gamma: t.gamma,
            delta: t.delta.name().into(),
            latent_dim: t.latent_dim,
            max_lag: t.max_lag,
            kappa: t.kappa,
            train_window: t.train_window,
            actm_seed: t.actm_seed,
            relation_threshold: t.relation_threshold,
            decoder_blocks: t.decoder_stack.blocks,
            decoder_layers: t.decoder_stack.layers,
            decoder_width: t.decoder_stack.width,
            decoder_residual: t.decoder_stack.residual,
            dynamic_blocks: t.dynamic_stack.blocks,
            dynamic_layers: t.dynamic_stack.layers,
            dynamic_width: t.dynamic_stack.width,
            dynamic_residual: t.dynamic_stack.residual,
            actm_hidden: t.actm_hidden,
            h_g: t.h_g.name().into(),
            h_d: t.h_d.name().into(),
            batch_steps: t.batch_steps,
        }
    }
}

/// Model family selected by `--variant`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Stann,
    StannR,
    StannD,
    /// Single-lag special case.
    Stnn,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stann" => Some(Variant::Stann),
            "stann-r" => Some(Variant::StannR),
            "stann-d" => Some(Variant::StannD),
            "stnn" => Some(Variant::Stnn),
            _ => None,
        }
    }
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn pick<T>(key: &str, value: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T, CliError> {
    parse(value).ok_or_else(|| usage(format!("unknown {key} `{value}`")))
}

impl RunConfig {
    /// Reads a config file and applies `overrides` on top, in order.
    pub fn load(path: Option<&Path>, overrides: Table) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| usage(format!("malformed config {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        table.extend(overrides);
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("invalid config: {}", e.message())))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        self.variant()?;
        self.missing()?;
        self.strategy()?;
        self.annualization()?;
        if self.tau == 0 {
            return Err(usage("tau must be at least 1".into()));
        }
        if self.origins == 0 {
            return Err(usage("origins must be at least 1".into()));
        }
        self.train_config()?
            .validate()
            .map_err(|e| usage(e.to_string()))
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        pick("variant", &self.variant, Variant::parse)
    }

    pub fn missing(&self) -> Result<MissingPolicy, CliError> {
        pick("missing policy", &self.missing, MissingPolicy::parse)
    }

    pub fn strategy(&self) -> Result<Strategy, CliError> {
        pick("strategy", &self.strategy, Strategy::parse)
    }

    pub fn annualization(&self) -> Result<Annualization, CliError> {
        pick("annualization", &self.annualization, Annualization::parse)
    }

    pub fn dataset_label(&self) -> String {
        if let Some(d) = &self.dataset {
            return d.clone();
        }
        self.data
            .as_ref()
            .and_then(|p| p.file_stem())
            .map_or_else(|| "unnamed".into(), |s| s.to_string_lossy().into_owned())
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let (variant, max_lag) = match self.variant()? {
            Variant::Stann => (SpatialVariant::Plain, self.max_lag),
            Variant::StannR => (SpatialVariant::Reweighted, self.max_lag),
            Variant::StannD => (SpatialVariant::Discovered, self.max_lag),
            Variant::Stnn => (SpatialVariant::Plain, 1),
        };
        let act = |key: &str, v: &str| pick(key, v, Activation::parse);
        Ok(TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            lr_min: self.lr_min,
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
            },
            scheduler_period: self.scheduler_period,
            scheduler_mult: self.scheduler_mult,
            scheduler_decay: self.scheduler_decay,
            lambda: self.lambda,
            gamma: self.gamma,
            delta: pick("delta", &self.delta, DeltaKind::parse)?,
            latent_dim: self.latent_dim,
            max_lag,
            kappa: self.kappa,
            variant,
            train_window: self.train_window,
            seed: self.seed,
            actm_seed: self.actm_seed,
            relation_threshold: self.relation_threshold,
            decoder_stack: StackConfig {
                blocks: self.decoder_blocks,
                layers: self.decoder_layers,
                width: self.decoder_width,
                residual: self.decoder_residual,
            },
            dynamic_stack: StackConfig {
                blocks: self.dynamic_blocks,
                layers: self.dynamic_layers,
                width: self.dynamic_width,
                residual: self.dynamic_residual,
            },
            actm_hidden: self.actm_hidden,
            h_g: act("h_g", &self.h_g)?,
            h_d: act("h_d", &self.h_d)?,
            batch_steps: self.batch_steps,
        })
    }
}

/// Parses `key=value`; values that are not valid TOML are taken as strings.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(format!("missing key in `{s}`"));
    }
    let value = format!("v = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}
