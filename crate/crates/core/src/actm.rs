//! Adaptive-order attention over past latent states.
//!
//! A small sigmoid network scores each past state. Walking back from the
//! newest state, each score is spent from a unit cost budget; the walk halts
//! once spending the next score would leave no more than `kappa`, when the
//! available history runs out, or at `max_lag`. The last visited state gets
//! whatever budget remains, so the weights always sum to one and the number of
//! visited states is the effective autoregressive order at that step.

use rand::Rng;

use crate::diff::{BudgetPlan, DiffError, Graph, Tensor, Var};
use crate::params::{Dense, ParamStore};
use crate::Error;

pub const DEFAULT_KAPPA: f64 = 0.01;
pub const DEFAULT_MAX_LAG: usize = 64;

/// Halting network `N -> hidden (tanh) -> 1 (sigmoid)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActmParams {
    pub hidden: Dense,
    pub output: Dense,
}

impl ActmParams {
    pub fn init<R: Rng>(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            hidden: Dense::init(store, "actm.hidden", input, hidden, rng),
            output: Dense::init(store, "actm.output", hidden, 1, rng),
        }
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        self.hidden.input_dim(store)
    }

    /// Halting probabilities for every row of `states`, as a `rows × 1` node.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], states: Var) -> Result<Var, DiffError> {
        let h = self.hidden.forward(g, vars, states)?;
        let h = g.tanh(h);
        let o = self.output.forward(g, vars, h)?;
        Ok(g.sigmoid(o))
    }
}

/// Remaining budgets while walking back through history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetState {
    pub b_time: usize,
    pub b_cost: f64,
    pub kappa: f64,
}

impl BudgetState {
    pub fn new(available: usize, kappa: f64) -> Self {
        Self {
            b_time: available,
            b_cost: 1.0,
            kappa,
        }
    }
}

/// Output of [`attend`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    /// Weight per lag, newest state first.
    pub weights: Vec<f64>,
    /// `Σ weights[k] * history[k]`.
    pub combined: Vec<f64>,
    pub order: usize,
}

impl AttentionResult {
    pub fn order(&self) -> usize {
        self.order
    }
}

pub fn validate_kappa(kappa: f64) -> Result<(), Error> {
    if kappa > 0.0 && kappa < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "kappa must lie in (0, 0.5), got {kappa}"
        )))
    }
}

/// Runs the budget walk given the halting probability of each lag
/// (`prob(0)` is the newest state). Returns the weights, one per visited lag.
pub fn halting_walk(
    mut prob: impl FnMut(usize) -> f64,
    available: usize,
    kappa: f64,
    max_lag: usize,
) -> Vec<f64> {
    let limit = available.min(max_lag);
    let mut budget = BudgetState::new(available, kappa);
    let mut weights = Vec::with_capacity(limit.min(8));
    for lag in 0..limit {
        let f = prob(lag);
        budget.b_time -= 1;
        if lag + 1 == limit || budget.b_cost - f <= budget.kappa {
            weights.push(budget.b_cost);
            break;
        }
        weights.push(f);
        budget.b_cost -= f;
    }
    weights
}

/// Halting probability of a single latent vector.
pub fn halting_probability(
    z: &[f64],
    params: &ActmParams,
    store: &ParamStore,
) -> Result<f64, Error> {
    let n = params.input_dim(store);
    if z.len() != n {
        return Err(Error::Dimension(format!(
            "latent of width {} fed to halting network of width {n}",
            z.len()
        )));
    }
    let mut g = Graph::new();
    let vars = store.constants(&mut g);
    let x = g.constant(Tensor::matrix(1, n, z.to_vec())?);
    let out = params.forward(&mut g, &vars, x)?;
    Ok(g.value(out).item())
}

/// Attends over `history` (newest first) using the halting network.
pub fn attend(
    history: &[&[f64]],
    params: &ActmParams,
    store: &ParamStore,
    kappa: f64,
    max_lag: usize,
) -> Result<AttentionResult, Error> {
    if history.is_empty() {
        return Err(Error::EmptyInput("attention history"));
    }
    validate_kappa(kappa)?;
    if max_lag == 0 {
        return Err(Error::InvalidConfig("max_lag must be at least 1".into()));
    }
    let considered = history.len().min(max_lag);
    let probs = history[..considered]
        .iter()
        .map(|z| halting_probability(z, params, store))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(attend_with(history, |k| probs[k], kappa, max_lag))
}

/// [`attend`] with an arbitrary halting function; useful for fixed scores.
pub fn attend_with(
    history: &[&[f64]],
    prob: impl FnMut(usize) -> f64,
    kappa: f64,
    max_lag: usize,
) -> AttentionResult {
    let weights = halting_walk(prob, history.len(), kappa, max_lag);
    let width = history.first().map_or(0, |z| z.len());
    let mut combined = vec![0.0; width];
    for (w, z) in weights.iter().zip(history) {
        for (c, v) in combined.iter_mut().zip(z.iter()) {
            *c += w * v;
        }
    }
    AttentionResult {
        order: weights.len(),
        weights,
        combined,
    }
}

/// Builds a [`BudgetPlan`] for predicting from every step in `targets`.
///
/// `halt` holds one probability per row of a `(steps × series)` row layout
/// (row `t * series + i`). For target step `t` the history of series `i` is
/// rows `t*series+i, (t-1)*series+i, ...`; `row_offset` is subtracted from
/// every emitted row index so the plan can address a truncated window.
/// Returns the plan and the order of every group.
pub fn build_plan(
    halt: &[f64],
    series: usize,
    targets: std::ops::Range<usize>,
    row_offset: usize,
    kappa: f64,
    max_lag: usize,
) -> (BudgetPlan, Vec<usize>) {
    let mut plan = BudgetPlan::new();
    let mut orders = Vec::with_capacity(targets.len() * series);
    let mut rows = Vec::with_capacity(max_lag.min(64));
    let first_step = row_offset / series.max(1);
    for t in targets {
        let available = t + 1 - first_step;
        for i in 0..series {
            let row = |lag: usize| (t - lag) * series + i;
            let weights =
                halting_walk(|lag| halt[row(lag) - row_offset], available, kappa, max_lag);
            rows.clear();
            rows.extend((0..weights.len()).map(|lag| row(lag) - row_offset));
            plan.push_group(&rows);
            orders.push(weights.len());
        }
    }
    (plan, orders)
}

/// Effective order per latent step and series, row-major `steps × series`.
pub fn order_matrix(halt: &[f64], series: usize, kappa: f64, max_lag: usize) -> Vec<Vec<usize>> {
    let steps = halt.len() / series.max(1);
    let (_, orders) = build_plan(halt, series, 0..steps, 0, kappa, max_lag);
    orders.chunks(series).map(|c| c.to_vec()).collect()
}

/// Writes an order matrix as `t,series,order` CSV.
pub fn write_order_trace<W: std::io::Write>(
    orders: &[Vec<usize>],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "t,series,order")?;
    for (t, row) in orders.iter().enumerate() {
        for (i, o) in row.iter().enumerate() {
            writeln!(out, "{t},{i},{o}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn walk(f: f64, available: usize) -> Vec<f64> {
        halting_walk(|_| f, available, DEFAULT_KAPPA, DEFAULT_MAX_LAG)
    }

    #[test]
    fn saturated_score_selects_one_lag() {
        assert_eq!(walk(0.995, 10), vec![1.0]);
    }

    #[test]
    fn constant_score_traces_by_hand() {
        let w = walk(0.4, 5);
        assert_eq!(w.len(), 3);
        assert_eq!(w[0], 0.4);
        assert_eq!(w[1], 0.4);
        assert_eq!(w[2], 1.0 - 0.4 - 0.4);
        assert!((w[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn short_history_gets_residual() {
        let w = walk(0.4, 2);
        assert_eq!(w, vec![0.4, 1.0 - 0.4]);
        assert_eq!(walk(0.1, 1), vec![1.0]);
    }

    #[test]
    fn max_lag_caps_order() {
        let w = halting_walk(|_| 0.1, 100, 0.01, 3);
        assert_eq!(w.len(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_network_gives_half() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ActmParams::init(&mut store, 3, 3, &mut rng);
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let f = halting_probability(&[1.0, -2.0, 3.0], &p, &store).unwrap();
        assert_eq!(f, 0.5);
        assert!(halting_probability(&[1.0], &p, &store).is_err());
    }

    #[test]
    fn attend_rejects_bad_inputs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ActmParams::init(&mut store, 2, 2, &mut rng);
        assert!(attend(&[], &p, &store, 0.01, 4).is_err());
        let z = [0.0, 1.0];
        assert!(attend(&[&z], &p, &store, 0.0, 4).is_err());
        assert!(attend(&[&z], &p, &store, 0.5, 4).is_err());
        let r = attend(&[&z], &p, &store, 0.01, 4).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_eq!(r.combined, z.to_vec());
    }

    #[test]
    fn plan_matches_walk() {
        // 3 steps, 2 series; series 0 always halts late, series 1 early.
        let halt = [0.3, 0.995, 0.3, 0.995, 0.3, 0.995];
        let (plan, orders) = build_plan(&halt, 2, 0..3, 0, 0.01, 64);
        assert_eq!(orders, vec![1, 1, 2, 1, 3, 1]);
        assert_eq!(plan.group(4), &[4, 2, 0]);
        assert_eq!(plan.group(5), &[5]);
        let m = order_matrix(&halt, 2, 0.01, 64);
        assert_eq!(m, vec![vec![1, 1], vec![2, 1], vec![3, 1]]);
    }
}
