use super::{DiffError, Graph, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over every element.
    pub max_relative_error: f64,
    /// Per-parameter maximum of the same quantity.
    pub per_param: Vec<f64>,
    /// `(param, element)` where the maximum occurred.
    pub worst: (usize, usize),
    pub evaluations: usize,
}

/// Checks `backward` against central finite differences.
///
/// `loss_fn` receives the parameters registered on a fresh graph (in the order
/// given) and must return a scalar node. It is called `1 + 2 * total_elements`
/// times and must be deterministic.
pub fn grad_check<E, F>(params: &[Tensor], eps: f64, loss_fn: F) -> Result<GradCheckReport, E>
where
    E: From<DiffError>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(DiffError::InvalidEpsilon(eps).into());
    }

    let mut graph = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| graph.param(p.clone())).collect();
    let root = loss_fn(&mut graph, &vars)?;
    check_finite(graph.value(root).item())?;
    graph.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| {
            graph
                .grad(v)
                .cloned()
                .expect("trainable leaf has a gradient")
        })
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|p| g.constant(p.clone())).collect();
        let root = loss_fn(&mut g, &vars)?;
        let v = g.value(root).item();
        check_finite(v)?;
        Ok(v)
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        per_param: vec![0.0; params.len()],
        worst: (0, 0),
        evaluations: 1,
    };
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let original = params[p].data()[e];
            work[p].data_mut()[e] = original + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[e] = original - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[e] = original;
            report.evaluations += 2;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[e];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.per_param[p] {
                report.per_param[p] = err;
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (p, e);
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64) -> Result<(), DiffError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(DiffError::NonFinite {
            context: "grad_check loss".into(),
        })
    }
}
