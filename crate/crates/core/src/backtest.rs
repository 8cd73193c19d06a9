//! Long-only, whole-share portfolio simulation driven by forecasts.
//!
//! At every rebalance date the book is liquidated at the close and
//! `floor(w_i · equity / price_i)` shares of each asset are bought. Leftover
//! cash earns the period's risk-free rate until the next date. Fees are zero.

use chrono::NaiveDate;
use serde::Serialize;

use crate::metrics::{mean_std, MetricError};
use crate::Error;

pub const INITIAL_CAPITAL: f64 = 10_000.0;
pub const TRADING_DAYS: f64 = 252.0;

/// Allocation rule applied at each rebalance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Softmax over assets with a positive forecast trend, cash otherwise.
    Simple,
    /// `1/n` in every asset.
    Equal,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Simple => "simple",
            Strategy::Equal => "equal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "simple" => Some(Strategy::Simple),
            "equal" => Some(Strategy::Equal),
            _ => None,
        }
    }
}

/// Scaling applied to the per-period Sharpe ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Annualization {
    /// `sqrt(252 / tau)`.
    Conventional,
    /// `sqrt(tau / 252)`, as literally printed in the method description.
    Paper,
}

impl Annualization {
    pub fn name(self) -> &'static str {
        match self {
            Annualization::Conventional => "conventional",
            Annualization::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conventional" => Some(Annualization::Conventional),
            "paper" => Some(Annualization::Paper),
            _ => None,
        }
    }

    pub fn factor(self, tau: usize) -> f64 {
        let periods = TRADING_DAYS / tau as f64;
        match self {
            Annualization::Conventional => periods.sqrt(),
            Annualization::Paper => periods.recip().sqrt(),
        }
    }
}

/// Target portfolio weights, each in `[0, 1]`, summing to at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategySignal {
    pub weights: Vec<f64>,
}

/// Softmax weights over assets whose forecast ends above the last price.
pub fn simple_strategy(
    final_forecast: &[f64],
    last_prices: &[f64],
) -> Result<StrategySignal, Error> {
    if final_forecast.len() != last_prices.len() {
        return Err(Error::Dimension(format!(
            "{} forecasts for {} prices",
            final_forecast.len(),
            last_prices.len()
        )));
    }
    if let Some(i) = last_prices.iter().position(|&p| p <= 0.0 || !p.is_finite()) {
        return Err(Error::Data(format!(
            "asset {i} has non-positive last price"
        )));
    }
    let trends: Vec<f64> = final_forecast
        .iter()
        .zip(last_prices)
        .map(|(f, p)| (f - p) / p)
        .collect();
    let top = trends
        .iter()
        .copied()
        .filter(|&t| t > 0.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0; trends.len()];
    if top.is_finite() {
        for (w, &t) in weights.iter_mut().zip(&trends) {
            if t > 0.0 {
                *w = (t - top).exp();
            }
        }
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
    }
    Ok(StrategySignal { weights })
}

pub fn equal_weight(n: usize) -> Result<StrategySignal, Error> {
    if n == 0 {
        return Err(Error::EmptyInput("asset list"));
    }
    Ok(StrategySignal {
        weights: vec![1.0 / n as f64; n],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub asset: usize,
    pub delta_shares: i64,
    pub price: f64,
}

/// Portfolio value at a date, marked at that date's closes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mark {
    pub date: NaiveDate,
    pub equity: f64,
    pub cash: f64,
    /// `Σ shares · price`.
    pub holdings: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Portfolio {
    pub cash: f64,
    pub shares: Vec<u64>,
    pub equity_curve: Vec<Mark>,
    pub trade_log: Vec<Trade>,
}

impl Portfolio {
    pub fn new(initial: f64, assets: usize) -> Self {
        Self {
            cash: initial,
            shares: vec![0; assets],
            equity_curve: Vec::new(),
            trade_log: Vec::new(),
        }
    }

    pub fn holdings(&self, prices: &[f64]) -> f64 {
        self.shares
            .iter()
            .zip(prices)
            .map(|(&s, p)| s as f64 * p)
            .sum()
    }

    pub fn equity(&self, prices: &[f64]) -> f64 {
        self.cash + self.holdings(prices)
    }

    /// Appends a mark at `prices`.
    pub fn mark(&mut self, date: NaiveDate, prices: &[f64]) {
        let holdings = self.holdings(prices);
        self.equity_curve.push(Mark {
            date,
            equity: self.cash + holdings,
            cash: self.cash,
            holdings,
        });
    }
}

fn check_prices(prices: &[f64], n: usize) -> Result<(), Error> {
    if prices.len() != n {
        return Err(Error::Dimension(format!(
            "{} prices for {n} assets",
            prices.len()
        )));
    }
    if let Some(i) = prices.iter().position(|&p| p <= 0.0 || !p.is_finite()) {
        return Err(Error::Data(format!(
            "asset {i} has non-positive price {}",
            prices[i]
        )));
    }
    Ok(())
}

/// Liquidates, buys whole shares toward `signal`, then accrues `rf_period`
/// on the leftover cash.
pub fn rebalance(
    p: &mut Portfolio,
    signal: &StrategySignal,
    prices: &[f64],
    rf_period: f64,
    date: NaiveDate,
) -> Result<(), Error> {
    let n = p.shares.len();
    check_prices(prices, n)?;
    if signal.weights.len() != n || signal.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::InvalidConfig(
            "signal weights must be n values in [0, 1]".into(),
        ));
    }
    let equity = p.equity(prices);
    let old = std::mem::replace(&mut p.shares, vec![0; n]);
    let mut cash = equity;
    for i in 0..n {
        let mut k = (signal.weights[i] * equity / prices[i]).floor().max(0.0) as u64;
        while k > 0 && k as f64 * prices[i] > cash {
            k -= 1;
        }
        cash -= k as f64 * prices[i];
        p.shares[i] = k;
        if k != old[i] {
            p.trade_log.push(Trade {
                date,
                asset: i,
                delta_shares: k as i64 - old[i] as i64,
                price: prices[i],
            });
        }
    }
    p.cash = cash * (1.0 + rf_period);
    Ok(())
}

/// Mean excess return over its sample standard deviation, annualized.
pub fn sharpe(
    returns: &[f64],
    rf_period: &[f64],
    tau: usize,
    annualization: Annualization,
) -> Result<f64, MetricError> {
    if returns.len() < 2 {
        return Err(MetricError::Undefined("Sharpe ratio"));
    }
    if rf_period.len() != returns.len() {
        return Err(MetricError::HorizonMismatch {
            actual: returns.len(),
            forecast: rf_period.len(),
        });
    }
    let excess: Vec<f64> = returns.iter().zip(rf_period).map(|(r, f)| r - f).collect();
    let (mean, sd) = mean_std(&excess);
    if sd == 0.0 {
        return Err(MetricError::Undefined("Sharpe ratio"));
    }
    Ok(mean / sd * annualization.factor(tau))
}

/// Worst relative decline from a running peak; `0` or negative.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        worst = worst.min(e / peak - 1.0);
    }
    worst
}

pub fn period_returns(equity: &[f64]) -> Vec<f64> {
    equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    /// `None` when fewer than two periods or zero excess-return variance.
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub mean_return_per_period: f64,
    pub total_profit_pct: f64,
}

pub fn summary(
    curve: &[Mark],
    rf_period: &[f64],
    tau: usize,
    annualization: Annualization,
) -> Result<Summary, Error> {
    if curve.is_empty() {
        return Err(Error::EmptyInput("equity curve"));
    }
    let equity: Vec<f64> = curve.iter().map(|m| m.equity).collect();
    let returns = period_returns(&equity);
    let mean_return_per_period = if returns.is_empty() {
        0.0
    } else {
        returns.iter().sum::<f64>() / returns.len() as f64
    };
    Ok(Summary {
        sharpe: sharpe(&returns, rf_period, tau, annualization).ok(),
        max_drawdown: max_drawdown(&equity),
        mean_return_per_period,
        total_profit_pct: 100.0 * (equity[equity.len() - 1] / equity[0] - 1.0),
    })
}

/// Inputs of [`run_backtest`]; `K` rebalances need `K + 1` dates.
#[derive(Clone, Copy, Debug)]
pub struct BacktestInput<'a> {
    pub dates: &'a [NaiveDate],
    /// Closes at each date, `n` per date.
    pub prices: &'a [Vec<f64>],
    /// Forecast available at each rebalance, `tau × n` row-major.
    pub forecasts: &'a [Vec<f64>],
    /// Risk-free return over each holding period.
    pub rf_period: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestResult {
    pub portfolio: Portfolio,
    pub summary: Summary,
}

pub fn run_backtest(
    input: BacktestInput,
    strategy: Strategy,
    initial: f64,
    tau: usize,
    annualization: Annualization,
) -> Result<BacktestResult, Error> {
    let k = input.forecasts.len();
    if input.dates.len() != k + 1 || input.prices.len() != k + 1 || input.rf_period.len() != k {
        return Err(Error::Data(format!(
            "{k} rebalances need {} dates and prices and {k} risk-free rates, got {}, {} and {}",
            k + 1,
            input.dates.len(),
            input.prices.len(),
            input.rf_period.len()
        )));
    }
    if input.dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Data("rebalance dates must increase".into()));
    }
    let n = input.prices.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::EmptyInput("asset list"));
    }
    let mut p = Portfolio::new(initial, n);
    for (j, f) in input.forecasts.iter().enumerate() {
        let prices = &input.prices[j];
        check_prices(prices, n)?;
        p.mark(input.dates[j], prices);
        let signal = match strategy {
            Strategy::Equal => equal_weight(n)?,
            Strategy::Simple => {
                if f.is_empty() || f.len() % n != 0 {
                    return Err(Error::Dimension(format!(
                        "forecast at {} is not a whole number of rows",
                        input.dates[j]
                    )));
                }
                simple_strategy(&f[f.len() - n..], prices)?
            }
        };
        rebalance(&mut p, &signal, prices, input.rf_period[j], input.dates[j])?;
    }
    check_prices(&input.prices[k], n)?;
    p.mark(input.dates[k], &input.prices[k]);
    // The first mark precedes any trade; later marks follow each holding period.
    let summary = summary(&p.equity_curve, input.rf_period, tau, annualization)?;
    Ok(BacktestResult {
        portfolio: p,
        summary,
    })
}

/// Converts an annualized rate to the return over `tau` trading days.
pub fn period_rate(annual: f64, tau: usize) -> f64 {
    (1.0 + annual).powf(tau as f64 / TRADING_DAYS) - 1.0
}
