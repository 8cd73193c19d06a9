//! Subcommand bodies. Each reads its inputs, writes its tables into the
//! output directory and leaves the manifest to the caller.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;
use stann::actm::write_order_trace;
use stann::backtest::{period_rate, run_backtest, BacktestInput, Summary, INITIAL_CAPITAL};
use stann::baselines::{Autoregressive, Naive};
use stann::data::{ingest_path, synth, write_frame, PriceFrame, SynthKind, SynthParams};
use stann::exec::Exec;
use stann::metrics::{
    per_origin_relative, relative_report, relative_rows, RelativeSummary, ScoreRow,
};
use stann::model::toy::{toy_grad_check, TOY_EPSILON};
use stann::model::{read_checkpoint, write_checkpoint, Checkpoint};
use stann::train::{
    evaluate_origin, fit, forecast_prices, rolling_origin_cv, CvOrigin, CvSplit, Forecaster,
    StannForecaster, TrainConfig, MIN_TRAIN_ROWS,
};

use crate::config::RunConfig;
use crate::output::{
    read_forecasts, write_forecasts, write_ipf, write_loss_curve, write_origin_scores,
    write_scores, OutDir,
};
use crate::{CliError, Command};

/// Largest relative gradient error `grad-check` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const CHECKPOINT_FILE: &str = "checkpoint.stann";
const REFERENCE: &str = "naive";

pub fn execute(command: &Command, cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    match command {
        Command::Synth {
            kind,
            series,
            steps,
            phi,
            phi2,
            segment,
            sigma,
            common,
            drift,
        } => {
            let kind = SynthKind::parse(kind)
                .ok_or_else(|| CliError::Usage(format!("unknown kind `{kind}`")))?;
            let d = SynthParams::default();
            let p = SynthParams {
                series: series.unwrap_or(d.series),
                steps: steps.unwrap_or(d.steps),
                phi: phi.unwrap_or(d.phi),
                phi2: phi2.as_ref().map_or(d.phi2, |v| (v[0], v[1])),
                segment: segment.unwrap_or(d.segment),
                sigma: sigma.unwrap_or(d.sigma),
                common: common.unwrap_or(d.common),
                drift: drift.unwrap_or(d.drift),
                ..d
            };
            let frame = synth(kind, &p, cfg.seed)?;
            write_frame(&frame, out.create_file("prices.csv")?)?;
            Ok(())
        }
        Command::Train { origin } => {
            train(cfg, *origin, out)?;
            Ok(())
        }
        Command::Forecast { checkpoint, origin } => forecast(cfg, checkpoint, *origin, out),
        Command::Evaluate {
            forecasts,
            reference,
        } => evaluate(cfg, forecasts, reference, out),
        Command::Cv { models } => cv(cfg, models, out),
        Command::Backtest { model } => backtest(cfg, model, out),
        Command::GradCheck => grad_check(cfg, out),
        Command::TraceArOrder { checkpoint } => trace(cfg, checkpoint.as_deref(), out),
        Command::Ablate => ablate(cfg, out),
        Command::Replay { .. } => Err(CliError::Usage("replay cannot be nested".into())),
    }
}

fn load_frame(cfg: &RunConfig) -> Result<PriceFrame, CliError> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    Ok(ingest_path(path, cfg.missing()?)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let f = std::fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot open checkpoint {}: {e}", path.display())))?;
    Ok(read_checkpoint(std::io::BufReader::new(f))?)
}

fn save_checkpoint(ck: &Checkpoint, out: &mut OutDir) -> Result<(), CliError> {
    let mut w = out.create_file(CHECKPOINT_FILE)?;
    write_checkpoint(ck, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Fits on the window ending at `origin` and writes the checkpoint and loss
/// curve. A diverged fit still saves its last good parameters.
fn train(cfg: &RunConfig, origin: Option<usize>, out: &mut OutDir) -> Result<Checkpoint, CliError> {
    let frame = load_frame(cfg)?;
    let tc = cfg.train_config()?;
    let end = origin.unwrap_or(frame.len());
    if end > frame.len() || end < MIN_TRAIN_ROWS {
        return Err(CliError::Data(format!(
            "origin {end} must lie in {MIN_TRAIN_ROWS}..={}",
            frame.len()
        )));
    }
    let start = end.saturating_sub(tc.train_window);
    let n = frame.n();
    match fit(
        &frame.values()[start * n..end * n],
        n,
        &tc,
        Some(frame.tickers()),
    ) {
        Ok(fitted) => {
            save_checkpoint(&fitted.checkpoint, out)?;
            write_loss_curve(&fitted.loss_curve, out.create_file("loss_curve.csv")?)?;
            Ok(fitted.checkpoint)
        }
        Err(stann::Error::Diverged { epoch, last_good }) => {
            if let Some(ck) = &last_good {
                save_checkpoint(ck, out)?;
            }
            Err(CliError::Numeric(format!(
                "training diverged at epoch {epoch}"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn forecast(
    cfg: &RunConfig,
    checkpoint: &Path,
    origin: Option<usize>,
    out: &mut OutDir,
) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let values = forecast_prices(&ck, cfg.tau)?;
    let origin = origin.unwrap_or(ck.model.steps() + 1);
    let n = ck.last_obs.len();
    write_forecasts(&[(origin, &values)], n, out.create_file("forecast.csv")?)?;
    Ok(())
}

/// A model's outcome at every origin.
struct Scored {
    name: String,
    origins: Vec<CvOrigin>,
}

impl Scored {
    fn scores(&self) -> Vec<ScoreRow> {
        self.origins
            .iter()
            .flat_map(|o| o.scores.iter().copied())
            .collect()
    }
}

/// Writes per-model tables and the relative report against the naive model,
/// which must be the first entry.
fn report(
    cfg: &RunConfig,
    models: &[Scored],
    n: usize,
    out: &mut OutDir,
) -> Result<Vec<RelativeSummary>, CliError> {
    let table: Vec<(String, Vec<ScoreRow>)> = models
        .iter()
        .map(|m| (m.name.clone(), m.scores()))
        .collect();
    let summaries = relative_report(&table, &models[0].name, &cfg.dataset_label())?;
    for (m, s) in models.iter().zip(&summaries) {
        let forecasts: Vec<(usize, &[f64])> = m
            .origins
            .iter()
            .map(|o| (o.split.origin, &o.forecast[..]))
            .collect();
        write_forecasts(
            &forecasts,
            n,
            out.create_file(&format!("forecast_{}.csv", m.name))?,
        )?;
        let scores = m.scores();
        write_scores(&scores, out.create_file(&format!("cv_{}.csv", m.name))?)?;
        let ipf: Vec<(usize, &[Vec<f64>])> = m
            .origins
            .iter()
            .map(|o| (o.split.origin, &o.ipf[..]))
            .collect();
        write_ipf(&ipf, out.create_file(&format!("ipf_{}.csv", m.name))?)?;
        let rel = relative_rows(&scores, &table[0].1, &m.name)?;
        write_scores(&rel, out.create_file(&format!("relative_{}.csv", m.name))?)?;
        write_origin_scores(
            &per_origin_relative(&rel),
            out.create_file(&format!("relative_origin_{}.csv", m.name))?,
        )?;
        out.write_json(&format!("metrics_{}.json", m.name), s)?;
    }
    write_summary_table(&summaries, out.create_file("metrics.csv")?)?;
    for s in &summaries {
        println!(
            "{:<12} mase {:.4} ± {:.4} (median {:.4})  theil {:.4} ± {:.4}  mda {:.4} ± {:.4}",
            s.model,
            s.mase_mean,
            s.mase_std,
            s.mase_median,
            s.theil_mean,
            s.theil_std,
            s.mda_mean,
            s.mda_std
        );
    }
    Ok(summaries)
}

fn write_summary_table<W: Write>(rows: &[RelativeSummary], mut w: W) -> Result<(), CliError> {
    writeln!(w, "model,dataset,origins,mase_mean,mase_std,mase_median,theil_mean,theil_std,mda_mean,mda_std")?;
    for s in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.model,
            s.dataset,
            s.origins,
            s.mase_mean,
            s.mase_std,
            s.mase_median,
            s.theil_mean,
            s.theil_std,
            s.mda_mean,
            s.mda_std
        )?;
    }
    w.flush()?;
    Ok(())
}

fn model_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    stem.strip_prefix("forecast_").unwrap_or(&stem).to_string()
}

fn evaluate(
    cfg: &RunConfig,
    paths: &[std::path::PathBuf],
    reference: &str,
    out: &mut OutDir,
) -> Result<(), CliError> {
    let frame = load_frame(cfg)?;
    let n = frame.n();
    let mut stored = Vec::new();
    for p in paths {
        let f = read_forecasts(p)?;
        if f.n != n {
            return Err(CliError::Data(format!(
                "{} covers {} series, data has {n}",
                p.display(),
                f.n
            )));
        }
        stored.push((model_name(p), f));
    }
    let (tau, origins) = {
        let f = &stored[0].1;
        (f.tau, f.origins.iter().map(|o| o.0).collect::<Vec<_>>())
    };
    for (name, f) in &stored {
        if f.tau != tau || f.origins.iter().map(|o| o.0).ne(origins.iter().copied()) {
            return Err(CliError::Data(format!(
                "forecasts of `{name}` do not share origins and horizon"
            )));
        }
    }
    let splits = origins
        .iter()
        .map(|&o| {
            if o == 0 || o + tau > frame.len() {
                return Err(CliError::Data(format!(
                    "origin {o} with horizon {tau} falls outside the data"
                )));
            }
            Ok(CvSplit {
                origin: o,
                train: o.saturating_sub(cfg.train_window)..o,
                test: o..o + tau,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let score = |name: String, forecasts: Vec<Vec<f64>>| -> Result<Scored, CliError> {
        let origins = splits
            .iter()
            .zip(forecasts)
            .map(|(s, f)| evaluate_origin(frame.values(), n, s, f))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Scored { name, origins })
    };
    let mut models = Vec::new();
    if let Some(k) = stored.iter().position(|(m, _)| m == reference) {
        let (name, f) = stored.remove(k);
        models.push(score(name, f.origins.into_iter().map(|o| o.1).collect())?);
    } else if reference == REFERENCE {
        let naive = splits
            .iter()
            .map(|s| Naive.forecast(&frame.values()[s.train.start * n..s.train.end * n], n, tau))
            .collect::<Result<Vec<_>, _>>()?;
        models.push(score(REFERENCE.into(), naive)?);
    } else {
        return Err(CliError::Usage(format!(
            "no forecasts for reference model `{reference}`"
        )));
    }
    for (name, f) in stored {
        models.push(score(name, f.origins.into_iter().map(|o| o.1).collect())?);
    }
    report(cfg, &models, n, out)?;
    Ok(())
}

fn forecaster(
    name: &str,
    cfg: &RunConfig,
    tc: &TrainConfig,
) -> Result<Box<dyn Forecaster>, CliError> {
    Ok(match name {
        "naive" => Box::new(Naive),
        "ar" => Box::new(Autoregressive::default()),
        "stann" => Box::new(StannForecaster {
            config: tc.clone(),
            name: cfg.variant.clone(),
        }),
        other => return Err(CliError::Usage(format!("unknown model `{other}`"))),
    })
}

fn cross_validate(
    frame: &PriceFrame,
    cfg: &RunConfig,
    model: &dyn Forecaster,
) -> Result<Scored, CliError> {
    let r = rolling_origin_cv(
        frame.values(),
        frame.n(),
        model,
        cfg.train_window,
        cfg.tau,
        cfg.origins,
        Exec::default(),
    )?;
    Ok(Scored {
        name: r.model,
        origins: r.origins,
    })
}

fn cv(cfg: &RunConfig, names: &[String], out: &mut OutDir) -> Result<(), CliError> {
    let frame = load_frame(cfg)?;
    let tc = cfg.train_config()?;
    let mut models = vec![cross_validate(&frame, cfg, &Naive)?];
    for name in names.iter().filter(|m| *m != REFERENCE) {
        let f = forecaster(name, cfg, &tc)?;
        models.push(cross_validate(&frame, cfg, f.as_ref())?);
    }
    report(cfg, &models, frame.n(), out)?;
    Ok(())
}

/// Annual risk-free rate in force at each date.
fn risk_free(source: &str, dates: &[NaiveDate]) -> Result<Vec<f64>, CliError> {
    if let Ok(rate) = source.trim().parse::<f64>() {
        if !rate.is_finite() || rate <= -1.0 {
            return Err(CliError::Usage(format!(
                "risk-free rate {rate} must exceed -1"
            )));
        }
        return Ok(vec![rate; dates.len()]);
    }
    let mut rdr = csv::Reader::from_path(source)
        .map_err(|e| CliError::Usage(format!("--rf is neither a rate nor a readable file: {e}")))?;
    let mut table: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || {
            CliError::Data(format!(
                "{source}: malformed row {:?}",
                rec.iter().collect::<Vec<_>>()
            ))
        };
        let date = NaiveDate::parse_from_str(rec.get(0).ok_or_else(bad)?.trim(), "%Y-%m-%d")
            .map_err(|_| bad())?;
        let rate: f64 = rec
            .get(1)
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        table.insert(date, rate);
    }
    dates
        .iter()
        .map(|d| {
            table
                .range(..=*d)
                .next_back()
                .map(|(_, r)| *r)
                .ok_or_else(|| {
                    CliError::Data(format!("{source}: no risk-free rate on or before {d}"))
                })
        })
        .collect()
}

#[derive(Serialize)]
struct BacktestSummary<'a> {
    #[serde(flatten)]
    summary: &'a Summary,
    model: &'a str,
    strategy: &'a str,
    annualization: &'a str,
    sharpe_factor: f64,
    tau: usize,
    train_window: usize,
    rebalances: usize,
    initial_capital: f64,
    final_equity: f64,
    risk_free: &'a str,
}

/// Rebalances every `tau` rows starting once a full training window exists;
/// each forecast uses history up to and including the rebalance close.
fn backtest(cfg: &RunConfig, model: &str, out: &mut OutDir) -> Result<(), CliError> {
    let frame = load_frame(cfg)?;
    let (n, tau) = (frame.n(), cfg.tau);
    let first = cfg.train_window.min(frame.len()).max(MIN_TRAIN_ROWS) - 1;
    if first + tau >= frame.len() {
        return Err(CliError::Data(format!(
            "need more than {} rows for one rebalance, have {}",
            first + tau,
            frame.len()
        )));
    }
    let rows: Vec<usize> = (first..frame.len()).step_by(tau).collect();
    let k = rows.len() - 1;
    let tc = cfg.train_config()?;
    let values = frame.values();
    let forecasts: Vec<Vec<f64>> = if model == "oracle" {
        rows.iter()
            .take(k)
            .map(|&r| values[(r + 1) * n..(r + 1 + tau) * n].to_vec())
            .collect()
    } else {
        let f = forecaster(model, cfg, &tc)?;
        Exec::default().try_map_range(k, |j| {
            let end = rows[j] + 1;
            let start = end.saturating_sub(cfg.train_window);
            f.forecast(&values[start * n..end * n], n, tau)
        })?
    };
    let dates: Vec<NaiveDate> = rows.iter().map(|&r| frame.dates()[r]).collect();
    let prices: Vec<Vec<f64>> = rows.iter().map(|&r| frame.row(r).to_vec()).collect();
    let rf: Vec<f64> = risk_free(&cfg.rf, &dates[..k])?
        .into_iter()
        .map(|r| period_rate(r, tau))
        .collect();
    let strategy = cfg.strategy()?;
    let annualization = cfg.annualization()?;
    let result = run_backtest(
        BacktestInput {
            dates: &dates,
            prices: &prices,
            forecasts: &forecasts,
            rf_period: &rf,
        },
        strategy,
        INITIAL_CAPITAL,
        tau,
        annualization,
    )?;
    let p = &result.portfolio;
    let mut w = out.create_file("equity.csv")?;
    writeln!(w, "date,equity,cash")?;
    for m in &p.equity_curve {
        writeln!(w, "{},{},{}", m.date, m.equity, m.cash)?;
    }
    w.flush()?;
    let mut w = out.create_file("trades.csv")?;
    writeln!(w, "date,asset,delta_shares,price")?;
    for t in &p.trade_log {
        writeln!(
            w,
            "{},{},{},{}",
            t.date,
            frame.tickers()[t.asset],
            t.delta_shares,
            t.price
        )?;
    }
    w.flush()?;
    let s = &result.summary;
    out.write_json(
        "summary.json",
        &BacktestSummary {
            summary: s,
            model,
            strategy: strategy.name(),
            annualization: annualization.name(),
            sharpe_factor: annualization.factor(tau),
            tau,
            train_window: cfg.train_window,
            rebalances: k,
            initial_capital: INITIAL_CAPITAL,
            final_equity: p.equity_curve.last().map_or(INITIAL_CAPITAL, |m| m.equity),
            risk_free: &cfg.rf,
        },
    )?;
    println!(
        "{model}/{}: profit {:.2}%  sharpe {}  max drawdown {:.2}%  over {k} rebalances",
        strategy.name(),
        s.total_profit_pct,
        s.sharpe
            .map_or_else(|| "undefined".into(), |v| format!("{v:.4}")),
        100.0 * s.max_drawdown
    );
    Ok(())
}

#[derive(Serialize)]
struct GradReport {
    max_relative_error: f64,
    per_parameter: Vec<f64>,
    worst_parameter: usize,
    worst_element: usize,
    evaluations: usize,
    epsilon: f64,
    tolerance: f64,
    passed: bool,
}

fn grad_check(cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let r = toy_grad_check(cfg.seed)?;
    let passed = r.max_relative_error < GRAD_TOLERANCE;
    out.write_json(
        "grad_check.json",
        &GradReport {
            max_relative_error: r.max_relative_error,
            per_parameter: r.per_param.clone(),
            worst_parameter: r.worst.0,
            worst_element: r.worst.1,
            evaluations: r.evaluations,
            epsilon: TOY_EPSILON,
            tolerance: GRAD_TOLERANCE,
            passed,
        },
    )?;
    println!(
        "max relative error {:.3e} over {} evaluations (tolerance {GRAD_TOLERANCE:e})",
        r.max_relative_error, r.evaluations
    );
    if passed {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {:.3e} ≥ {GRAD_TOLERANCE:e}",
            r.max_relative_error
        )))
    }
}

fn trace(cfg: &RunConfig, checkpoint: Option<&Path>, out: &mut OutDir) -> Result<(), CliError> {
    let ck = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => train(cfg, None, out)?,
    };
    let orders = ck.model.order_trace()?;
    let mut w = out.create_file("order_trace.csv")?;
    write_order_trace(&orders, &mut w)?;
    w.flush()?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for o in orders.iter().flatten() {
        *counts.entry(*o).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let fractions: BTreeMap<String, f64> = counts
        .iter()
        .map(|(o, c)| (o.to_string(), *c as f64 / total as f64))
        .collect();
    out.write_json("order_fractions.json", &fractions)?;
    for (o, f) in &fractions {
        println!("order {o}: {:.1}%", 100.0 * f);
    }
    Ok(())
}

/// `(label, attention on, residual stacks on)`.
pub const ABLATIONS: [(&str, bool, bool); 4] = [
    ("full", true, true),
    ("no-actm", false, true),
    ("no-stack", true, false),
    ("no-actm-no-stack", false, false),
];

fn ablate(cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let frame = load_frame(cfg)?;
    let base = cfg.train_config()?;
    let mut models = vec![cross_validate(&frame, cfg, &Naive)?];
    for (label, actm, stack) in ABLATIONS {
        let mut tc = base.clone();
        if !actm {
            tc.max_lag = 1;
        }
        if !stack {
            tc.decoder_stack.residual = false;
            tc.dynamic_stack.residual = false;
        }
        let model = StannForecaster {
            config: tc,
            name: label.into(),
        };
        models.push(cross_validate(&frame, cfg, &model)?);
    }
    let summaries = report(cfg, &models, frame.n(), out)?;
    let mut w = out.create_file("ablation.csv")?;
    writeln!(w, "model,actm,stack,origins,mase_mean,mase_std,mase_median,theil_mean,theil_std,mda_mean,mda_std")?;
    for ((label, actm, stack), s) in ABLATIONS.iter().zip(&summaries[1..]) {
        writeln!(
            w,
            "{label},{actm},{stack},{},{},{},{},{},{},{},{}",
            s.origins,
            s.mase_mean,
            s.mase_std,
            s.mase_median,
            s.theil_mean,
            s.theil_std,
            s.mda_mean,
            s.mda_std
        )?;
    }
    w.flush()?;
    Ok(())
}
