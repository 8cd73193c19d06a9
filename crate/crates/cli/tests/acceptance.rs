//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 5 and 7 measure what training achieves rather than what the code
//! computes; they are reported but only fail the run when
//! `STANN_ACCEPTANCE_STRICT` is set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use stann::actm::{halting_walk, DEFAULT_KAPPA};
use stann::backtest::{
    max_drawdown, run_backtest, sharpe, Annualization, BacktestInput, Strategy, INITIAL_CAPITAL,
};
use stann::data::{business_days, synth, SynthKind, SynthParams};
use stann::metrics::{ipf, mase, mda, theil_u, EvalFrame};
use tempfile::TempDir;

const REPORT_ONLY: [usize; 2] = [5, 7];
const SEEDS: u64 = 10;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(10);
const REGIME_BUDGET: Duration = Duration::from_secs(600);
const SIMPLEX_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-12;
const ACCOUNTING_TOL: f64 = 1e-9;
const MIN_ORDER_SHARE: f64 = 0.10;
const MIN_REGIME_SEEDS: usize = 7;

/// Training budget shared by the learned criteria.
const TRAIN: [&str; 8] = [
    "--set",
    "decoder_width=16",
    "--set",
    "dynamic_width=16",
    "--set",
    "lambda=0.01",
    "--set",
    "learning_rate=0.01",
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Cli {
    root: TempDir,
    runs: usize,
}

impl Cli {
    fn new() -> Self {
        Self {
            root: TempDir::new().expect("temp dir"),
            runs: 0,
        }
    }

    /// Runs the binary with `--out` pointing at a fresh directory.
    fn run(&mut self, args: &[&str]) -> (i32, PathBuf, String) {
        self.runs += 1;
        let out = self.root.path().join(format!("run{:03}", self.runs));
        let o = Command::new(env!("CARGO_BIN_EXE_stann"))
            .args(args)
            .arg("--out")
            .arg(&out)
            .output()
            .expect("binary runs");
        let text = format!(
            "{}{}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
        (o.status.code().unwrap_or(-1), out, text)
    }

    fn ok(&mut self, args: &[&str]) -> PathBuf {
        let (code, out, text) = self.run(args);
        assert_eq!(code, 0, "stann {args:?} failed:\n{text}");
        out
    }

    fn synth(&mut self, kind: &str, seed: u64, extra: &[&str]) -> PathBuf {
        let seed = seed.to_string();
        let mut args = vec!["synth", "--kind", kind, "--seed", &seed];
        args.extend(extra);
        self.ok(&args).join("prices.csv")
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("json output")).expect("valid json")
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn gradient_correctness(cli: &mut Cli) -> Outcome {
    let start = Instant::now();
    let (code, out, _) = cli.run(&["grad-check"]);
    let elapsed = start.elapsed();
    if code != 0 {
        return outcome(false, format!("grad-check exited {code}"));
    }
    let err = json(&out.join("grad_check.json"))["max_relative_error"]
        .as_f64()
        .unwrap_or(f64::NAN);
    outcome(
        err < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!("max relative error {err:.2e} (< {GRAD_TOL:e}) in {elapsed:.2?}"),
    )
}

fn halting_traces() -> Outcome {
    let saturated = halting_walk(|_| 0.995, 10, DEFAULT_KAPPA, 64) == [1.0];
    let w = halting_walk(|_| 0.4, 10, DEFAULT_KAPPA, 64);
    let constant = w.len() == 3 && w[..2] == [0.4, 0.4] && (w[2] - 0.2).abs() < 1e-15;
    let truncated = halting_walk(|_| 0.4, 2, DEFAULT_KAPPA, 64) == [0.4, 0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let available = rng.random_range(1..80);
        let max_lag = rng.random_range(1..70);
        let kappa = rng.random_range(1e-4..0.49);
        let probs: Vec<f64> = (0..available).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = halting_walk(|k| probs[k], available, kappa, max_lag)
            .iter()
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    outcome(
        saturated && constant && truncated && worst <= SIMPLEX_TOL,
        format!(
            "traces {saturated}/{constant}/{truncated}, max |Σφ - 1| {worst:.1e} over 1000 calls"
        ),
    )
}

fn naive_anchoring(cli: &mut Cli) -> Outcome {
    let mut exact = true;
    for kind in ["ar1_panel", "regime_switch", "dominant_asset"] {
        let data = cli.synth(kind, 3, &["--steps", "700"]);
        let out = cli.ok(&["cv", "--models", "naive,ar", "--data", arg(&data)]);
        let m = json(&out.join("metrics_naive.json"));
        exact &= m["mase_mean"].as_f64() == Some(1.0) && m["theil_mean"].as_f64() == Some(1.0);
        exact &= m["mase_std"].as_f64() == Some(0.0) && m["theil_std"].as_f64() == Some(0.0);
    }
    let data = cli.synth("dominant_asset", 0, &["--steps", "700", "--sigma", "0"]);
    let out = cli.ok(&["cv", "--models", "naive", "--data", arg(&data)]);
    let mut rdr = csv::Reader::from_path(out.join("cv_naive.csv")).expect("cv scores");
    let mdas: Vec<f64> = rdr
        .deserialize::<BTreeMap<String, String>>()
        .map(|r| r.expect("row")["mda"].parse().expect("number"))
        .collect();
    let zero = !mdas.is_empty() && mdas.iter().all(|&v| v == 0.0);
    outcome(
        exact && zero,
        format!("relative MASE/Theil-U exactly 1 on three panels: {exact}; MDA on monotone panel {mdas:?}"),
    )
}

fn stnn_special_case(cli: &mut Cli) -> Outcome {
    let data = cli.synth("ar1_panel", 2, &["--steps", "300", "--series", "3"]);
    let forecast = |cli: &mut Cli, variant: &str, actm_seed: &str| -> Vec<u8> {
        let seed = format!("actm_seed={actm_seed}");
        let ck = cli.ok(&[
            "train",
            "--data",
            arg(&data),
            "--variant",
            variant,
            "--set",
            &seed,
            "--set",
            "epochs=30",
            "--set",
            "train_window=200",
        ]);
        let ck = ck.join("checkpoint.stann");
        let out = cli.ok(&["forecast", "--checkpoint", arg(&ck), "--data", arg(&data)]);
        fs::read(out.join("forecast.csv")).expect("forecast")
    };
    let stnn: Vec<Vec<u8>> = ["1", "2", "3"]
        .iter()
        .map(|s| forecast(cli, "stnn", s))
        .collect();
    let identical = stnn.windows(2).all(|w| w[0] == w[1]);
    let control = forecast(cli, "stann", "1") != forecast(cli, "stann", "2");
    outcome(
        identical,
        format!("stnn forecasts identical across 3 ACTM seeds: {identical}; stann forecasts differ: {control}"),
    )
}

fn regime_order_recovery(cli: &mut Cli) -> Outcome {
    let start = Instant::now();
    let mut hits = 0;
    let mut shares = Vec::new();
    for seed in 0..SEEDS {
        let data = cli.synth("regime_switch", seed, &["--series", "4", "--steps", "1500"]);
        let s = seed.to_string();
        let mut args = vec![
            "trace-ar-order",
            "--data",
            arg(&data),
            "--seed",
            &s,
            "--set",
            "train_window=1500",
            "--set",
            "epochs=200",
        ];
        args.extend(TRAIN);
        let out = cli.ok(&args);
        let f = json(&out.join("order_fractions.json"));
        let share = |k: &str| f[k].as_f64().unwrap_or(0.0);
        let (o1, o2) = (share("1"), share("2"));
        hits += (o1 >= MIN_ORDER_SHARE && o2 >= MIN_ORDER_SHARE) as usize;
        shares.push(format!("{:.0}/{:.0}", 100.0 * o1, 100.0 * o2));
    }
    let elapsed = start.elapsed();
    outcome(
        hits >= MIN_REGIME_SEEDS && elapsed < REGIME_BUDGET,
        format!(
            "{hits}/{SEEDS} seeds with ≥10% each of orders 1 and 2 (need {MIN_REGIME_SEEDS}); \
             order-1/order-2 % per seed [{}] in {elapsed:.0?}",
            shares.join(" ")
        ),
    )
}

fn beats_naive(cli: &mut Cli) -> Outcome {
    let data = cli.synth(
        "ar1_panel",
        0,
        &["--series", "5", "--steps", "1000", "--phi", "0.9"],
    );
    let mut args = vec![
        "cv",
        "--data",
        arg(&data),
        "--tau",
        "21",
        "--set",
        "origins=5",
        "--set",
        "epochs=200",
    ];
    args.extend(TRAIN);
    let out = cli.ok(&args);
    let stann = json(&out.join("metrics_stann.json"))["mase_median"]
        .as_f64()
        .unwrap_or(f64::NAN);
    let ar = json(&out.join("metrics_ar.json"))["mase_mean"]
        .as_f64()
        .unwrap_or(f64::NAN);
    outcome(
        stann < 1.0 && ar < 1.0,
        format!("STANN median relative MASE {stann:.4}, AR relative MASE {ar:.4}"),
    )
}

fn ablation_structure(cli: &mut Cli) -> Outcome {
    let mut full = Vec::new();
    let mut bare = Vec::new();
    let mut four = true;
    for seed in 0..SEEDS {
        let data = cli.synth("regime_switch", seed, &["--series", "4", "--steps", "1500"]);
        let s = seed.to_string();
        let mut args = vec![
            "ablate",
            "--data",
            arg(&data),
            "--seed",
            &s,
            "--set",
            "epochs=100",
        ];
        args.extend(TRAIN);
        let out = cli.ok(&args);
        let mut rdr = csv::Reader::from_path(out.join("ablation.csv")).expect("ablation table");
        let rows: BTreeMap<String, f64> = rdr
            .deserialize::<BTreeMap<String, String>>()
            .map(|r| {
                let r = r.expect("row");
                (
                    r["model"].clone(),
                    r["mase_median"].parse().expect("number"),
                )
            })
            .collect();
        four &= rows.len() == 4;
        full.push(rows["full"]);
        bare.push(rows["no-actm-no-stack"]);
    }
    let (f, b) = (median(full), median(bare));
    outcome(
        four && f <= b,
        format!("four rows per run: {four}; {SEEDS}-seed median MASE full {f:.4} vs no-actm-no-stack {b:.4}"),
    )
}

fn sgn(v: f64) -> i8 {
    (v > 0.0) as i8 - (v < 0.0) as i8
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    for _ in 0..100 {
        let len = rng.random_range(3..30);
        let tau = rng.random_range(1..12);
        let mut level = 100.0;
        let mut path: Vec<f64> = (0..len + tau)
            .map(|_| {
                level += rng.random_range(-2.0..2.0);
                level
            })
            .collect();
        let actual = path.split_off(len);
        let insample = path;
        let forecast: Vec<f64> = actual
            .iter()
            .map(|a| a + rng.random_range(-3.0..3.0))
            .collect();
        let frame = EvalFrame::new(&insample, &actual, &forecast, 1).expect("frame");

        let whole: Vec<f64> = insample.iter().chain(&actual).copied().collect();
        let scale =
            whole.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (whole.len() - 1) as f64;
        let last = insample[len - 1];
        let mut errs = Vec::new();
        let (mut num, mut den, mut hits) = (0.0, 0.0, 0usize);
        for j in 0..tau {
            errs.push((actual[j] - forecast[j]).abs() / scale);
            num += (forecast[j] - actual[j]).powi(2);
            den += (actual[j] - last).powi(2);
            hits += (sgn(forecast[j] - last) == sgn(actual[j] - last)) as usize;
        }
        let got_ipf = ipf(&frame).expect("ipf");
        let got_mase = mase(&frame).expect("mase");
        ok &= got_ipf
            .iter()
            .zip(&errs)
            .all(|(a, b)| close(*a, *b, ORACLE_TOL));
        ok &= close(got_mase, errs.iter().sum::<f64>() / tau as f64, ORACLE_TOL);
        ok &= got_mase == got_ipf.iter().sum::<f64>() / tau as f64;
        ok &= close(
            theil_u(&frame).expect("theil"),
            (num / den).sqrt(),
            ORACLE_TOL,
        );
        ok &= close(mda(&frame), hits as f64 / tau as f64, ORACLE_TOL);

        let periods = rng.random_range(2..40);
        let r: Vec<f64> = (0..periods).map(|_| rng.random_range(-0.1..0.1)).collect();
        let rf: Vec<f64> = (0..periods).map(|_| rng.random_range(0.0..0.002)).collect();
        let x: Vec<f64> = r.iter().zip(&rf).map(|(a, b)| a - b).collect();
        let m = x.iter().sum::<f64>() / periods as f64;
        let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (periods - 1) as f64).sqrt();
        let hold = rng.random_range(1..60);
        let want = m / sd * (252.0 / hold as f64).sqrt();
        ok &= close(
            sharpe(&r, &rf, hold, Annualization::Conventional).expect("sharpe"),
            want,
            ORACLE_TOL,
        );

        let mut e = 100.0;
        let curve: Vec<f64> = (0..periods)
            .map(|_| {
                e *= 1.0 + rng.random_range(-0.1..0.1);
                e
            })
            .collect();
        let mut worst = 0.0f64;
        for i in 0..periods {
            for j in i..periods {
                worst = worst.min(curve[j] / curve[i] - 1.0);
            }
        }
        ok &= close(max_drawdown(&curve), worst, ORACLE_TOL);
    }
    outcome(ok, "mase, theil_u, mda, ipf, sharpe, max_drawdown vs brute force on 100 instances; mase = mean(ipf)")
}

fn backtest_accounting(cli: &mut Cli) -> Outcome {
    let mut worst = 0.0f64;
    let mut marks = 0;
    for kind in [
        SynthKind::Ar1Panel,
        SynthKind::RegimeSwitch,
        SynthKind::DominantAsset,
    ] {
        for seed in 0..5 {
            let f = synth(
                kind,
                &SynthParams {
                    steps: 600,
                    ..Default::default()
                },
                seed,
            )
            .expect("panel");
            let rows: Vec<usize> = (0..f.len()).step_by(21).collect();
            let dates: Vec<_> = rows.iter().map(|&r| f.dates()[r]).collect();
            let prices: Vec<Vec<f64>> = rows.iter().map(|&r| f.row(r).to_vec()).collect();
            let k = prices.len() - 1;
            for strategy in [Strategy::Simple, Strategy::Equal] {
                let r = run_backtest(
                    BacktestInput {
                        dates: &dates,
                        prices: &prices,
                        forecasts: &prices[1..],
                        rf_period: &vec![0.0004; k],
                    },
                    strategy,
                    INITIAL_CAPITAL,
                    21,
                    Annualization::Conventional,
                )
                .expect("backtest");
                for m in &r.portfolio.equity_curve {
                    worst = worst.max((m.cash + m.holdings - m.equity).abs() / m.equity);
                    marks += 1;
                }
            }
        }
    }

    let dates = business_days(
        chrono::NaiveDate::from_ymd_opt(2022, 1, 3).expect("date"),
        8,
    );
    let prices = vec![vec![12.5, 40.0, 7.25]; 8];
    let forecasts = vec![vec![13.0, 39.0, 8.0]; 7];
    let flat = [Strategy::Simple, Strategy::Equal].iter().all(|&s| {
        let r = run_backtest(
            BacktestInput {
                dates: &dates,
                prices: &prices,
                forecasts: &forecasts,
                rf_period: &[0.0; 7],
            },
            s,
            INITIAL_CAPITAL,
            21,
            Annualization::Conventional,
        )
        .expect("backtest");
        r.summary.total_profit_pct == 0.0
    });

    let mut dominant = true;
    for seed in 0..3 {
        let data = cli.synth("dominant_asset", seed, &["--steps", "600"]);
        let profit = |cli: &mut Cli, strategy: &str| {
            let out = cli.ok(&[
                "backtest",
                "--model",
                "oracle",
                "--strategy",
                strategy,
                "--data",
                arg(&data),
            ]);
            json(&out.join("summary.json"))["total_profit_pct"]
                .as_f64()
                .unwrap_or(f64::NAN)
        };
        dominant &= profit(cli, "simple") >= profit(cli, "equal");
    }
    outcome(
        worst <= ACCOUNTING_TOL && flat && dominant,
        format!("max accounting gap {worst:.1e} over {marks} marks; flat prices 0%: {flat}; oracle simple ≥ equal: {dominant}"),
    )
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .map(|p| {
            (
                p.file_name().expect("name").to_string_lossy().into_owned(),
                fs::read(&p).expect("file"),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism(cli: &mut Cli) -> Outcome {
    let data = cli.synth("regime_switch", 6, &["--series", "3", "--steps", "320"]);
    let d = arg(&data).to_string();
    let small = [
        "--set",
        "epochs=5",
        "--set",
        "train_window=150",
        "--set",
        "origins=2",
    ];
    let mut runs: Vec<(&str, PathBuf)> = Vec::new();
    runs.push(("synth", data.parent().expect("dir").to_path_buf()));
    runs.push(("grad-check", cli.ok(&["grad-check"])));
    let mut with = |cli: &mut Cli, name: &'static str, args: &[&str]| -> PathBuf {
        let mut a = args.to_vec();
        a.extend(["--data", &d]);
        a.extend(small);
        let out = cli.ok(&a);
        runs.push((name, out.clone()));
        out
    };
    let train = with(cli, "train", &["train"]);
    let ck = train.join("checkpoint.stann");
    let fc = with(cli, "forecast", &["forecast", "--checkpoint", arg(&ck)]);
    let _ = fc;
    let cv = with(cli, "cv", &["cv"]);
    let f = cv.join("forecast_stann.csv");
    with(cli, "evaluate", &["evaluate", "--forecasts", arg(&f)]);
    with(cli, "backtest", &["backtest"]);
    with(cli, "trace-ar-order", &["trace-ar-order"]);
    with(cli, "ablate", &["ablate"]);

    let mut failed = Vec::new();
    for (name, dir) in &runs {
        let manifest = dir.join("manifest.json");
        let (code, again, _) = cli.run(&["replay", arg(&manifest)]);
        if code != 0 || outputs(dir) != outputs(&again) {
            failed.push(*name);
        }
    }
    outcome(
        failed.is_empty(),
        format!(
            "{} subcommands replayed from their manifests; mismatches {failed:?}",
            runs.len()
        ),
    )
}

type Check = dyn FnOnce(&mut Cli) -> Outcome;

fn main() {
    // Under `cargo test -- --list` or a name filter, do nothing.
    if std::env::args()
        .skip(1)
        .any(|a| !a.starts_with('-') || a == "--list")
    {
        return;
    }
    let strict = std::env::var_os("STANN_ACCEPTANCE_STRICT").is_some();
    let mut cli = Cli::new();
    let criteria: Vec<(&str, Box<Check>)> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("halting traces", Box::new(|_| halting_traces())),
        ("naive anchoring", Box::new(naive_anchoring)),
        ("stnn special case", Box::new(stnn_special_case)),
        ("regime order recovery", Box::new(regime_order_recovery)),
        ("beats naive on ar1 panel", Box::new(beats_naive)),
        ("ablation structure", Box::new(ablation_structure)),
        ("metric oracles", Box::new(|_| metric_oracles())),
        ("backtest accounting", Box::new(backtest_accounting)),
        ("determinism", Box::new(determinism)),
    ];
    let mut blocking = Vec::new();
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        let id = k + 1;
        let start = Instant::now();
        let o = check(&mut cli);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {id:>2} {name}: {} [{:.1?}]",
            o.detail,
            start.elapsed()
        );
        if !o.pass && (strict || !REPORT_ONLY.contains(&id)) {
            blocking.push(id);
        }
    }
    if !blocking.is_empty() {
        eprintln!("blocking failures: {blocking:?}");
        std::process::exit(1);
    }
}
