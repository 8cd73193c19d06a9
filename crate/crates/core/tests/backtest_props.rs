use chrono::NaiveDate;
use stann::backtest::{
    rebalance, run_backtest, summary, Annualization, BacktestInput, Portfolio, Strategy,
    StrategySignal, INITIAL_CAPITAL,
};
use stann::data::{business_days, synth, SynthKind, SynthParams};

const TAU: usize = 21;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 4).unwrap()
}

struct Run {
    dates: Vec<NaiveDate>,
    prices: Vec<Vec<f64>>,
    /// Perfect foresight of the next rebalance close.
    foresight: Vec<Vec<f64>>,
}

fn rebalance_run(kind: SynthKind, seed: u64) -> Run {
    let p = SynthParams {
        series: 4,
        steps: 400,
        ..Default::default()
    };
    let f = synth(kind, &p, seed).unwrap();
    let rows: Vec<usize> = (0..f.len()).step_by(TAU).collect();
    let dates = rows.iter().map(|&r| f.dates()[r]).collect();
    let prices: Vec<Vec<f64>> = rows.iter().map(|&r| f.row(r).to_vec()).collect();
    let foresight = prices[1..].to_vec();
    Run {
        dates,
        prices,
        foresight,
    }
}

fn backtest(run: &Run, strategy: Strategy, rf: f64) -> stann::backtest::BacktestResult {
    let k = run.foresight.len();
    run_backtest(
        BacktestInput {
            dates: &run.dates,
            prices: &run.prices,
            forecasts: &run.foresight,
            rf_period: &vec![rf; k],
        },
        strategy,
        INITIAL_CAPITAL,
        TAU,
        Annualization::Conventional,
    )
    .unwrap()
}

#[test]
fn accounting_identity_holds_at_every_mark() {
    for kind in [
        SynthKind::Ar1Panel,
        SynthKind::RegimeSwitch,
        SynthKind::DominantAsset,
    ] {
        for seed in 0..5 {
            let run = rebalance_run(kind, seed);
            for strategy in [Strategy::Simple, Strategy::Equal] {
                let r = backtest(&run, strategy, 0.001);
                let curve = &r.portfolio.equity_curve;
                assert_eq!(curve.len(), run.dates.len());
                for m in curve {
                    assert!(m.cash >= 0.0);
                    assert!((m.cash + m.holdings - m.equity).abs() <= 1e-9 * m.equity);
                }
            }
        }
    }
}

#[test]
fn constant_prices_without_interest_make_nothing() {
    let n = 3;
    let dates = business_days(start(), 6);
    let prices = vec![vec![10.0, 33.0, 71.5]; 6];
    let forecasts = vec![vec![11.0, 30.0, 80.0]; 5];
    for strategy in [Strategy::Simple, Strategy::Equal] {
        let r = run_backtest(
            BacktestInput {
                dates: &dates,
                prices: &prices,
                forecasts: &forecasts,
                rf_period: &[0.0; 5],
            },
            strategy,
            INITIAL_CAPITAL,
            TAU,
            Annualization::Conventional,
        )
        .unwrap();
        assert_eq!(r.summary.total_profit_pct, 0.0);
        assert_eq!(r.summary.max_drawdown, 0.0);
        assert_eq!(r.portfolio.shares.len(), n);
    }
}

#[test]
fn foresight_on_dominant_asset_beats_equal_weight() {
    for seed in 0..5 {
        let run = rebalance_run(SynthKind::DominantAsset, seed);
        let simple = backtest(&run, Strategy::Simple, 0.0)
            .summary
            .total_profit_pct;
        let equal = backtest(&run, Strategy::Equal, 0.0)
            .summary
            .total_profit_pct;
        assert!(
            simple >= equal,
            "seed {seed}: simple {simple} < equal {equal}"
        );
    }
}

#[test]
fn whole_share_purchase() {
    let mut p = Portfolio::new(10_000.0, 1);
    let s = StrategySignal { weights: vec![1.0] };
    rebalance(&mut p, &s, &[300.0], 0.0, start()).unwrap();
    assert_eq!(p.shares, vec![33]);
    assert_eq!(p.cash, 100.0);
}

#[test]
fn repeated_target_only_accrues_interest() {
    let s = StrategySignal {
        weights: vec![0.3, 0.4],
    };
    let prices = [17.0, 41.0];

    let mut p = Portfolio::new(10_000.0, 2);
    rebalance(&mut p, &s, &prices, 0.0, start()).unwrap();
    let (shares, equity) = (p.shares.clone(), p.equity(&prices));
    rebalance(&mut p, &s, &prices, 0.0, start()).unwrap();
    assert_eq!(p.shares, shares);
    assert_eq!(p.equity(&prices), equity);

    let rf = 0.01;
    let mut p = Portfolio::new(10_000.0, 2);
    rebalance(&mut p, &s, &prices, rf, start()).unwrap();
    let before = p.equity(&prices);
    rebalance(&mut p, &s, &prices, rf, start()).unwrap();
    let leftover = p.cash / (1.0 + rf);
    assert!((p.equity(&prices) - before - leftover * rf).abs() < 1e-9);
}

#[test]
fn summary_is_recomputable_from_the_curve() {
    let run = rebalance_run(SynthKind::Ar1Panel, 3);
    let r = backtest(&run, Strategy::Simple, 0.0005);
    let eq: Vec<f64> = r.portfolio.equity_curve.iter().map(|m| m.equity).collect();
    let profit = 100.0 * (eq[eq.len() - 1] / eq[0] - 1.0);
    assert_eq!(r.summary.total_profit_pct, profit);
    let rets: Vec<f64> = eq.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let mean = rets.iter().sum::<f64>() / rets.len() as f64;
    assert!((r.summary.mean_return_per_period - mean).abs() < 1e-15);
    let again = summary(
        &r.portfolio.equity_curve,
        &vec![0.0005; rets.len()],
        TAU,
        Annualization::Conventional,
    )
    .unwrap();
    assert_eq!(again, r.summary);
}
