use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{DiffError, Tensor};

static NEXT_GRAPH_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: usize,
    index: usize,
}

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

/// Smallest distance a sigmoid output keeps from 0 and 1.
pub const SIGMOID_MARGIN: f64 = 1e-15;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => {
                let s = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                s.clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    SqL2,
    L1,
}

/// Grouping used by [`Graph::budget_combine`].
///
/// Group `g` covers `sources[offsets[g]..offsets[g + 1]]`. Every source but the
/// last is weighted by its own entry of the weight vector; the last one gets
/// the remaining mass `1 - sum(previous weights)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BudgetPlan {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl BudgetPlan {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            sources: Vec::new(),
        }
    }

    /// Appends a group. `sources` must be non-empty.
    pub fn push_group(&mut self, sources: &[usize]) {
        assert!(
            !sources.is_empty(),
            "budget group needs at least one source"
        );
        self.sources.extend_from_slice(sources);
        self.offsets.push(self.sources.len());
    }

    pub fn groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.sources[self.offsets[g]..self.offsets[g + 1]]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Elementwise(Elementwise, Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Activate(Activation, Var),
    Reduce(Reduction, Var),
    BlockMix {
        mix: Var,
        x: Var,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    BudgetCombine {
        weights: Var,
        states: Var,
        plan: Rc<BudgetPlan>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only tape of tensor operations for reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is a valid topological order, so
/// [`Graph::backward`] is a single reverse sweep.
pub struct Graph {
    id: usize,
    nodes: Vec<Node>,
    first_non_finite: Option<usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_error(op: &'static str, left: &Tensor, right: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.node(v).grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Index of the first node whose value contained NaN/Inf (debug builds only).
    pub fn first_non_finite(&self) -> Option<usize> {
        self.first_non_finite
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.graph, self.id, "variable belongs to another graph");
        &self.nodes[v.index]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if cfg!(debug_assertions) && self.first_non_finite.is_none() && !value.is_finite() {
            log::warn!("non-finite value produced at node {}", self.nodes.len());
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_error("matmul", ta, tb));
        }
        let (p, q, r) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; p * r];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..p {
            let row = &mut out[i * r..(i + 1) * r];
            for k in 0..q {
                let aik = da[i * q + k];
                if aik == 0.0 {
                    continue;
                }
                for (o, bkj) in row.iter_mut().zip(&db[k * r..(k + 1) * r]) {
                    *o += aik * bkj;
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_raw(vec![p, r], out), Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_error("elementwise", ta, tb));
        }
        let f: fn(f64, f64) -> f64 = match op {
            Elementwise::Add => |x, y| x + y,
            Elementwise::Sub => |x, y| x - y,
            Elementwise::Mul => |x, y| x * y,
        };
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_raw(ta.shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Elementwise(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.elementwise(Elementwise::Mul, a, b)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let value = Tensor::from_raw(t.shape().to_vec(), data);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Adds a length-`cols` bias vector to every row of a 2-D tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.len() != tx.cols() {
            return Err(shape_error("add_bias", tx, tb));
        }
        let c = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::from_raw(tx.shape().to_vec(), data);
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn activate(&mut self, kind: Activation, x: Var) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let t = self.value(x);
        let data = t.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::from_raw(t.shape().to_vec(), data);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Activate(kind, x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activate(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activate(Activation::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(Activation::Relu, x)
    }

    /// Reduces to a single-element tensor.
    pub fn reduce(&mut self, kind: Reduction, x: Var) -> Var {
        let t = self.value(x);
        let d = t.data();
        let v = match kind {
            Reduction::Sum => d.iter().sum(),
            Reduction::Mean => d.iter().sum::<f64>() / d.len().max(1) as f64,
            Reduction::SqL2 => d.iter().map(|v| v * v).sum(),
            Reduction::L1 => d.iter().map(|v| v.abs()).sum(),
        };
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(v), Op::Reduce(kind, x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(Reduction::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(Reduction::Mean, x)
    }

    pub fn sq_l2(&mut self, x: Var) -> Var {
        self.reduce(Reduction::SqL2, x)
    }

    pub fn l1(&mut self, x: Var) -> Var {
        self.reduce(Reduction::L1, x)
    }

    /// Left-multiplies every consecutive block of `n` rows of `x` by the
    /// `n × n` matrix `mix`.
    pub fn block_mix(&mut self, mix: Var, x: Var) -> Result<Var, DiffError> {
        let (tm, tx) = (self.value(mix), self.value(x));
        let n = tm.rows();
        if tm.shape().len() != 2 || tm.cols() != n || n == 0 || tx.rows() % n != 0 {
            return Err(shape_error("block_mix", tm, tx));
        }
        let c = tx.cols();
        let (m, xd) = (tm.data(), tx.data());
        let mut out = vec![0.0; tx.len()];
        for b in 0..tx.rows() / n {
            let base = b * n;
            for i in 0..n {
                let dst = &mut out[(base + i) * c..(base + i + 1) * c];
                for j in 0..n {
                    let w = m[i * n + j];
                    if w == 0.0 {
                        continue;
                    }
                    for (o, v) in dst.iter_mut().zip(&xd[(base + j) * c..(base + j + 1) * c]) {
                        *o += w * v;
                    }
                }
            }
        }
        let value = Tensor::from_raw(vec![tx.rows(), c], out);
        let rg = self.any_grad(&[mix, x]);
        Ok(self.push(value, Op::BlockMix { mix, x }, rg))
    }

    /// Rows `start..end` as a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let t = self.value(x);
        if start > end || end > t.rows() {
            return Err(DiffError::RowRange {
                start,
                end,
                rows: t.rows(),
            });
        }
        let c = t.cols();
        let value = Tensor::from_raw(vec![end - start, c], t.data()[start * c..end * c].to_vec());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts.first().ok_or(DiffError::EmptyInput("concat_rows"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_error("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::from_raw(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(x);
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= t.rows() {
                return Err(DiffError::RowRange {
                    start: r,
                    end: r + 1,
                    rows: t.rows(),
                });
            }
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::from_raw(vec![rows.len(), c], data);
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Budget-weighted sum of rows of `states`, one output row per plan group.
    ///
    /// `weights` holds one scalar per row of `states`.
    pub fn budget_combine(
        &mut self,
        weights: Var,
        states: Var,
        plan: Rc<BudgetPlan>,
    ) -> Result<Var, DiffError> {
        let (tw, ts) = (self.value(weights), self.value(states));
        if tw.len() != ts.rows() {
            return Err(shape_error("budget_combine", tw, ts));
        }
        if let Some(&bad) = plan.sources.iter().find(|&&s| s >= ts.rows()) {
            return Err(DiffError::RowRange {
                start: bad,
                end: bad + 1,
                rows: ts.rows(),
            });
        }
        let c = ts.cols();
        let (w, s) = (tw.data(), ts.data());
        let mut out = vec![0.0; plan.groups() * c];
        for g in 0..plan.groups() {
            let group = plan.group(g);
            let dst = &mut out[g * c..(g + 1) * c];
            let (last, head) = group.split_last().expect("non-empty group");
            let mut remaining = 1.0;
            for &src in head {
                let phi = w[src];
                remaining -= phi;
                for (o, v) in dst.iter_mut().zip(&s[src * c..(src + 1) * c]) {
                    *o += phi * v;
                }
            }
            for (o, v) in dst.iter_mut().zip(&s[last * c..(last + 1) * c]) {
                *o += remaining * v;
            }
        }
        let value = Tensor::from_raw(vec![plan.groups(), c], out);
        let rg = self.any_grad(&[weights, states]);
        Ok(self.push(
            value,
            Op::BudgetCombine {
                weights,
                states,
                plan,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across calls;
    /// every trainable leaf holds a gradient afterwards (zero when unreachable).
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        if root.graph != self.id {
            return Err(DiffError::ForeignVariable);
        }
        if !self.nodes[root.index].value.is_scalar() {
            return Err(DiffError::NonScalarRoot(
                self.nodes[root.index].value.shape().to_vec(),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=root.index).map(|_| None).collect();
        adj[root.index] = Some(Tensor::scalar(1.0));

        for i in (0..=root.index).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            let node = &self.nodes[i];
            for (parent, delta) in self.local_grads(&node.op, &node.value, &g) {
                accumulate(&mut adj, parent, delta);
            }
        }
        for node in &mut self.nodes {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    /// Gradient contributions of one node to its parents.
    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(usize, Tensor)> {
        let gd = g.data();
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (p, q, r) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(*a) {
                    // da = g · bᵀ, accumulated row by row so the inner loop vectorizes.
                    let bd = tb.data();
                    let mut bt = vec![0.0; r * q];
                    for k in 0..q {
                        for j in 0..r {
                            bt[j * q + k] = bd[k * r + j];
                        }
                    }
                    let mut da = vec![0.0; p * q];
                    for i in 0..p {
                        let drow = &mut da[i * q..(i + 1) * q];
                        for (j, &gij) in gd[i * r..(i + 1) * r].iter().enumerate() {
                            if gij == 0.0 {
                                continue;
                            }
                            for (d, b) in drow.iter_mut().zip(&bt[j * q..(j + 1) * q]) {
                                *d += gij * b;
                            }
                        }
                    }
                    res.push((a.index, Tensor::from_raw(ta.shape().to_vec(), da)));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; q * r];
                    let ad = ta.data();
                    for i in 0..p {
                        let grow = &gd[i * r..(i + 1) * r];
                        for k in 0..q {
                            let aik = ad[i * q + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[k * r..(k + 1) * r].iter_mut().zip(grow) {
                                *d += aik * gv;
                            }
                        }
                    }
                    res.push((b.index, Tensor::from_raw(tb.shape().to_vec(), db)));
                }
            }
            Op::Elementwise(kind, a, b) => {
                let shape = out.shape().to_vec();
                match kind {
                    Elementwise::Add | Elementwise::Sub => {
                        if self.requires_grad(*a) {
                            res.push((a.index, g.clone()));
                        }
                        if self.requires_grad(*b) {
                            let sign = if *kind == Elementwise::Add { 1.0 } else { -1.0 };
                            let d = gd.iter().map(|v| sign * v).collect();
                            res.push((b.index, Tensor::from_raw(shape, d)));
                        }
                    }
                    Elementwise::Mul => {
                        let (ta, tb) = (self.value(*a), self.value(*b));
                        if self.requires_grad(*a) {
                            let d = gd.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                            res.push((a.index, Tensor::from_raw(shape.clone(), d)));
                        }
                        if self.requires_grad(*b) {
                            let d = gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                            res.push((b.index, Tensor::from_raw(shape, d)));
                        }
                    }
                }
            }
            Op::Scale(a, factor) => {
                let d = gd.iter().map(|v| v * factor).collect();
                res.push((a.index, Tensor::from_raw(out.shape().to_vec(), d)));
            }
            Op::AddBias(x, bias) => {
                if self.requires_grad(*x) {
                    res.push((x.index, g.clone()));
                }
                if self.requires_grad(*bias) {
                    let tb = self.value(*bias);
                    let mut db = vec![0.0; tb.len()];
                    for row in gd.chunks(tb.len()) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    res.push((bias.index, Tensor::from_raw(tb.shape().to_vec(), db)));
                }
            }
            Op::Activate(kind, x) => {
                let tx = self.value(*x);
                let d = gd
                    .iter()
                    .zip(tx.data().iter().zip(out.data()))
                    .map(|(gv, (&xv, &yv))| gv * kind.derivative(xv, yv))
                    .collect();
                res.push((x.index, Tensor::from_raw(tx.shape().to_vec(), d)));
            }
            Op::Reduce(kind, x) => {
                let tx = self.value(*x);
                let s = gd[0];
                let n = tx.len().max(1) as f64;
                let d = tx
                    .data()
                    .iter()
                    .map(|&v| match kind {
                        Reduction::Sum => s,
                        Reduction::Mean => s / n,
                        Reduction::SqL2 => 2.0 * v * s,
                        Reduction::L1 => sign(v) * s,
                    })
                    .collect();
                res.push((x.index, Tensor::from_raw(tx.shape().to_vec(), d)));
            }
            Op::BlockMix { mix, x } => {
                let (tm, tx) = (self.value(*mix), self.value(*x));
                let n = tm.rows();
                let c = tx.cols();
                let blocks = tx.rows() / n;
                let (m, xd) = (tm.data(), tx.data());
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; tx.len()];
                    for b in 0..blocks {
                        let base = b * n;
                        for i in 0..n {
                            let grow = &gd[(base + i) * c..(base + i + 1) * c];
                            for j in 0..n {
                                let w = m[i * n + j];
                                if w == 0.0 {
                                    continue;
                                }
                                for (d, gv) in
                                    dx[(base + j) * c..(base + j + 1) * c].iter_mut().zip(grow)
                                {
                                    *d += w * gv;
                                }
                            }
                        }
                    }
                    res.push((x.index, Tensor::from_raw(tx.shape().to_vec(), dx)));
                }
                if self.requires_grad(*mix) {
                    let mut dm = vec![0.0; n * n];
                    for b in 0..blocks {
                        let base = b * n;
                        for i in 0..n {
                            let grow = &gd[(base + i) * c..(base + i + 1) * c];
                            for j in 0..n {
                                let xrow = &xd[(base + j) * c..(base + j + 1) * c];
                                dm[i * n + j] +=
                                    grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    res.push((mix.index, Tensor::from_raw(tm.shape().to_vec(), dm)));
                }
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                dx[start * c..start * c + gd.len()].copy_from_slice(gd);
                res.push((x.index, Tensor::from_raw(tx.shape().to_vec(), dx)));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let len = tp.len();
                    if self.requires_grad(*p) {
                        let d = gd[offset..offset + len].to_vec();
                        res.push((p.index, Tensor::from_raw(tp.shape().to_vec(), d)));
                    }
                    offset += len;
                }
            }
            Op::GatherRows { x, rows } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (d, gv) in dx[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(&gd[k * c..(k + 1) * c])
                    {
                        *d += gv;
                    }
                }
                res.push((x.index, Tensor::from_raw(tx.shape().to_vec(), dx)));
            }
            Op::BudgetCombine {
                weights,
                states,
                plan,
            } => {
                let (tw, ts) = (self.value(*weights), self.value(*states));
                let c = ts.cols();
                let (w, s) = (tw.data(), ts.data());
                let mut dw = vec![0.0; tw.len()];
                let mut ds = vec![0.0; ts.len()];
                for gi in 0..plan.groups() {
                    let group = plan.group(gi);
                    let grow = &gd[gi * c..(gi + 1) * c];
                    let (&last, head) = group.split_last().expect("non-empty group");
                    let last_row = &s[last * c..(last + 1) * c];
                    let mut remaining = 1.0;
                    for &src in head {
                        let phi = w[src];
                        remaining -= phi;
                        let row = &s[src * c..(src + 1) * c];
                        dw[src] += grow
                            .iter()
                            .zip(row.iter().zip(last_row))
                            .map(|(gv, (a, b))| gv * (a - b))
                            .sum::<f64>();
                        for (d, gv) in ds[src * c..(src + 1) * c].iter_mut().zip(grow) {
                            *d += phi * gv;
                        }
                    }
                    for (d, gv) in ds[last * c..(last + 1) * c].iter_mut().zip(grow) {
                        *d += remaining * gv;
                    }
                }
                if self.requires_grad(*weights) {
                    res.push((weights.index, Tensor::from_raw(tw.shape().to_vec(), dw)));
                }
                if self.requires_grad(*states) {
                    res.push((states.index, Tensor::from_raw(ts.shape().to_vec(), ds)));
                }
            }
        }
        res
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(adj: &mut [Option<Tensor>], index: usize, delta: Tensor) {
    match &mut adj[index] {
        Some(acc) => acc.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}
