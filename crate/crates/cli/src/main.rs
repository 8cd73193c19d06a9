//! `stann` command-line tool.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use config::{parse_assignment, RunConfig};
use output::OutDir;

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<stann::Error> for CliError {
    fn from(e: stann::Error) -> Self {
        let msg = e.to_string();
        match e {
            stann::Error::InvalidConfig(_) => CliError::Usage(msg),
            e if e.is_numeric() => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<stann::metrics::MetricError> for CliError {
    fn from(e: stann::metrics::MetricError) -> Self {
        stann::Error::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "stann",
    version,
    about = "Adaptive-order latent forecaster: train, evaluate, backtest"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Price CSV with header `date,<ticker>,...`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["stann", "stann-r", "stann-d", "stnn"])]
    variant: Option<String>,
    /// Forecast horizon in rows.
    #[arg(long, global = true)]
    tau: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["reject", "forward-fill"])]
    missing: Option<String>,
    #[arg(long, global = true, value_parser = ["simple", "equal"])]
    strategy: Option<String>,
    /// Annual risk-free rate, or a CSV `date,rate` of annual rates.
    #[arg(long, global = true)]
    rf: Option<String>,
    #[arg(long, global = true, value_parser = ["conventional", "paper"])]
    annualization: Option<String>,
    /// Sets any config key, e.g. `--set epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, Value)>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

impl GlobalArgs {
    fn overrides(&self) -> Table {
        let mut t: Table = self.set.iter().cloned().collect();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                t.insert(k.into(), v);
            }
        };
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| Value::String(p.to_string_lossy().into_owned()))
        };
        let text = |s: &Option<String>| s.clone().map(Value::String);
        put("data", path(&self.data));
        put("out", path(&self.out));
        put("variant", text(&self.variant));
        put("missing", text(&self.missing));
        put("strategy", text(&self.strategy));
        put("rf", text(&self.rf));
        put("annualization", text(&self.annualization));
        put("tau", self.tau.map(|v| Value::Integer(v as i64)));
        put("seed", self.seed.map(|v| Value::Integer(v as i64)));
        t
    }
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Writes a synthetic price panel to `prices.csv`.
    Synth {
        #[arg(long, default_value = "ar1_panel", value_parser = ["ar1_panel", "regime_switch", "dominant_asset"])]
        kind: String,
        #[arg(long)]
        series: Option<usize>,
        /// Number of dated rows.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        phi: Option<f64>,
        /// AR(2) coefficients of the second regime, `a1,a2`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        phi2: Option<Vec<f64>>,
        #[arg(long)]
        segment: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        common: Option<f64>,
        #[arg(long)]
        drift: Option<f64>,
    },
    /// Fits on the `train_window` rows before `--origin` (default: all rows).
    Train {
        #[arg(long)]
        origin: Option<usize>,
    },
    /// Forecasts `tau` rows past a checkpoint.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Row index written to the origin column; defaults to the rows trained on.
        #[arg(long)]
        origin: Option<usize>,
    },
    /// Scores stored forecast tables against the data.
    Evaluate {
        #[arg(long, value_delimiter = ',', required = true)]
        forecasts: Vec<PathBuf>,
        /// Model every scaled metric is divided by; computed from the data when not supplied.
        #[arg(long, default_value = "naive")]
        reference: String,
    },
    /// Rolling-origin cross-validation of several models.
    Cv {
        #[arg(long, value_delimiter = ',', default_value = "naive,ar,stann", value_parser = ["naive", "ar", "stann"])]
        models: Vec<String>,
    },
    /// Trades on rolling forecasts every `tau` rows.
    Backtest {
        #[arg(long, default_value = "stann", value_parser = ["naive", "ar", "stann", "oracle"])]
        model: String,
    },
    /// Compares analytic and finite-difference gradients on the bundled toy model.
    GradCheck,
    /// Writes the effective autoregressive order of every latent step.
    TraceArOrder {
        /// Trains on the data first when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Cross-validates the four combinations of attention and residual stacks.
    Ablate,
    /// Re-runs the command recorded in a manifest.
    #[serde(skip)]
    Replay { manifest: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Forecast { .. } => "forecast",
            Command::Evaluate { .. } => "evaluate",
            Command::Cv { .. } => "cv",
            Command::Backtest { .. } => "backtest",
            Command::GradCheck => "grad-check",
            Command::TraceArOrder { .. } => "trace-ar-order",
            Command::Ablate => "ablate",
            Command::Replay { .. } => "replay",
        }
    }

    /// Makes input paths absolute so the manifest replays from anywhere.
    fn absolutize(&mut self) {
        match self {
            Command::Forecast { checkpoint, .. } => absolutize(checkpoint),
            Command::TraceArOrder {
                checkpoint: Some(c),
            } => absolutize(c),
            Command::Evaluate { forecasts, .. } => forecasts.iter_mut().for_each(absolutize),
            _ => {}
        }
    }
}

fn absolutize(p: &mut PathBuf) {
    if let Ok(abs) = std::fs::canonicalize(&*p) {
        *p = abs;
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub parallel: bool,
    pub wall_time_secs: f64,
}

fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed manifest {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (mut command, mut config) = match cli.command {
        Command::Replay { manifest } => {
            let m = load_manifest(&manifest)?;
            let mut config = m.config;
            // Only the destination may change on replay.
            if let Some(out) = &cli.global.out {
                config.out = out.clone();
            }
            (m.command, config)
        }
        command => (
            command,
            RunConfig::load(cli.global.config.as_deref(), cli.global.overrides())?,
        ),
    };
    if let Some(d) = config.data.as_mut() {
        absolutize(d);
    }
    command.absolutize();

    let start = Instant::now();
    let mut out = OutDir::create(&config.out)?;
    commands::execute(&command, &config, &mut out)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        outputs: out.files().to_vec(),
        parallel: cfg!(feature = "parallel"),
        wall_time_secs: start.elapsed().as_secs_f64(),
        command,
        config,
    };
    out.write_json(MANIFEST, &manifest)?;
    log::info!(
        "{} finished in {:.2}s",
        manifest.command.name(),
        manifest.wall_time_secs
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stann: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
