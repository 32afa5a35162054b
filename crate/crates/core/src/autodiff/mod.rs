//! A small reverse-mode differentiation engine over dense 2-D f64 tensors.
//!
//! Graphs are built append-only; node ids are indices, so insertion order is
//! a topological order. Forward values live in a separate [`Values`] buffer
//! that can be extended incrementally when nodes are appended after an
//! evaluation (e.g. loss heads added on top of a network forward pass).
//!
//! Broadcasting is limited to row-wise ops (`add_row`, `mul_row`) where the
//! right operand is a single row. Non-smooth ops use the subgradient 0 at
//! exactly 0 and route min/max gradients to the lowest tied index.

mod check;

pub use check::{finite_diff_check, relative_error, GradientReport, TensorCheck};

use std::collections::HashMap;

use ndarray::{Array2, Axis};

use crate::{Error, Result};

pub type Tensor = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Parameter,
    Constant(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Min(NodeId),
    Max(NodeId),
    GatherRows(NodeId, Vec<usize>),
    SegmentMean(NodeId, usize),
    MinMaxNorm(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: (usize, usize),
    name: Option<String>,
}

/// Append-only computation graph.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Values bound to input and parameter leaves.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    map: HashMap<NodeId, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, node: NodeId, value: Tensor) -> &mut Self {
        self.map.insert(node, value);
        self
    }

    pub fn with(mut self, node: NodeId, value: Tensor) -> Self {
        self.map.insert(node, value);
        self
    }

    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.map.get(&node)
    }
}

/// Forward values of every evaluated node, indexed by node id.
#[derive(Clone, Debug, Default)]
pub struct Values {
    tensors: Vec<Tensor>,
}

impl Values {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Result<&Tensor> {
        self.tensors.get(node.0).ok_or(Error::NotEvaluated(node.0))
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, node: NodeId) -> Result<f64> {
        let t = self.get(node)?;
        if t.dim() != (1, 1) {
            return Err(Error::Shape(format!("node {} is {:?}, not a scalar", node.0, t.dim())));
        }
        Ok(t[[0, 0]])
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, node: NodeId) -> Result<(usize, usize)> {
        self.node(node).map(|n| n.shape)
    }

    pub fn name(&self, node: NodeId) -> Option<&str> {
        self.nodes.get(node.0).and_then(|n| n.name.as_deref())
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        self.nodes.push(Node { op, shape, name: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf nodes (inputs and parameters) must be bound at evaluation.
    pub fn input(&mut self, name: &str, shape: (usize, usize)) -> NodeId {
        let id = self.push(Op::Input, shape);
        self.nodes[id.0].name = Some(name.to_owned());
        id
    }

    pub fn parameter(&mut self, name: &str, shape: (usize, usize)) -> NodeId {
        let id = self.push(Op::Parameter, shape);
        self.nodes[id.0].name = Some(name.to_owned());
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.dim();
        self.push(Op::Constant(value), shape)
    }

    fn same_shape(&self, what: &str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa != sb {
            return Err(shape_err(what, sa, sb));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    fn row_operand(&self, what: &str, a: NodeId, row: NodeId) -> Result<(usize, usize)> {
        let (sa, sr) = (self.shape(a)?, self.shape(row)?);
        if sr != (1, sa.1) {
            return Err(shape_err(what, sa, sr));
        }
        Ok(sa)
    }

    /// `a` (N×C) plus a 1×C row added to every row.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let s = self.row_operand("add_row", a, row)?;
        Ok(self.push(Op::AddRow(a, row), s))
    }

    /// `a` (N×C) with every row multiplied elementwise by a 1×C row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let s = self.row_operand("mul_row", a, row)?;
        Ok(self.push(Op::MulRow(a, row), s))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let s = self.shape(a)?;
        Ok(self.push(Op::Scale(a, c), s))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let s = self.shape(a)?;
        Ok(self.push(Op::AddScalar(a, c), s))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        Ok(self.push(Op::MatMul(a, b), (sa.0, sb.1)))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        Ok(self.push(Op::Relu(a), s))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        Ok(self.push(Op::Abs(a), s))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.shape(a)?;
        Ok(self.push(Op::Sum(a), (1, 1)))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        if s.0 * s.1 == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        Ok(self.push(Op::Mean(a), (1, 1)))
    }

    /// Sums each row: N×C → N×1.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        Ok(self.push(Op::RowSum(a), (s.0, 1)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        Ok(self.push(Op::Softmax(a), s))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        Ok(self.push(Op::LogSoftmax(a), s))
    }

    /// Minimum over all elements; ties resolve to the lowest row-major index.
    pub fn min(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        if s.0 * s.1 == 0 {
            return Err(Error::Shape("min of an empty tensor".into()));
        }
        Ok(self.push(Op::Min(a), (1, 1)))
    }

    /// Maximum over all elements; ties resolve to the lowest row-major index.
    pub fn max(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        if s.0 * s.1 == 0 {
            return Err(Error::Shape("max of an empty tensor".into()));
        }
        Ok(self.push(Op::Max(a), (1, 1)))
    }

    /// Row `r` of the output is row `indices[r]` of `a`.
    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let s = self.shape(a)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= s.0) {
            return Err(Error::Shape(format!("gather index {bad} out of range for {} rows", s.0)));
        }
        let rows = indices.len();
        Ok(self.push(Op::GatherRows(a, indices), (rows, s.1)))
    }

    /// Averages consecutive blocks of `group` rows: (n·group)×C → n×C.
    pub fn segment_mean(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let s = self.shape(a)?;
        if group == 0 || s.0 % group != 0 {
            return Err(Error::Shape(format!("{} rows do not split into groups of {group}", s.0)));
        }
        Ok(self.push(Op::SegmentMean(a, group), (s.0 / group, s.1)))
    }

    /// Min-max normalisation over all elements; a constant input maps to zeros.
    pub fn min_max_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a)?;
        if s.0 * s.1 == 0 {
            return Err(Error::Shape("min-max norm of an empty tensor".into()));
        }
        Ok(self.push(Op::MinMaxNorm(a), s))
    }

    /// Evaluates every node.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<Values> {
        let mut values = Values::default();
        self.evaluate_from(&mut values, bindings, &HashMap::new())?;
        Ok(values)
    }

    /// Evaluates nodes appended since `values` was produced.
    pub fn extend(&self, values: &mut Values, bindings: &Bindings) -> Result<()> {
        self.evaluate_from(values, bindings, &HashMap::new())
    }

    /// Full evaluation with some node values replaced after they are computed.
    pub fn evaluate_with_overrides(&self, bindings: &Bindings, overrides: &HashMap<NodeId, Tensor>) -> Result<Values> {
        let mut values = Values::default();
        self.evaluate_from(&mut values, bindings, overrides)?;
        Ok(values)
    }

    fn evaluate_from(
        &self,
        values: &mut Values,
        bindings: &Bindings,
        overrides: &HashMap<NodeId, Tensor>,
    ) -> Result<()> {
        for idx in values.len()..self.nodes.len() {
            let id = NodeId(idx);
            let value = match overrides.get(&id) {
                Some(v) => v.clone(),
                None => self.forward_node(id, &values.tensors, bindings)?,
            };
            if value.dim() != self.nodes[idx].shape {
                return Err(shape_err("bound value", value.dim(), self.nodes[idx].shape));
            }
            values.tensors.push(value);
        }
        Ok(())
    }

    fn forward_node(&self, id: NodeId, vals: &[Tensor], bindings: &Bindings) -> Result<Tensor> {
        let v = |n: NodeId| &vals[n.0];
        Ok(match &self.nodes[id.0].op {
            Op::Input | Op::Parameter => bindings.get(id).cloned().ok_or(Error::Unbound(id.0))?,
            Op::Constant(t) => t.clone(),
            Op::Add(a, b) => v(*a) + v(*b),
            Op::Sub(a, b) => v(*a) - v(*b),
            Op::Mul(a, b) => v(*a) * v(*b),
            Op::AddRow(a, r) => v(*a) + v(*r),
            Op::MulRow(a, r) => v(*a) * v(*r),
            Op::Scale(a, c) => v(*a) * *c,
            Op::AddScalar(a, c) => v(*a) + *c,
            Op::MatMul(a, b) => v(*a).dot(v(*b)),
            Op::Relu(a) => v(*a).mapv(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Abs(a) => v(*a).mapv(f64::abs),
            Op::Sum(a) => Tensor::from_elem((1, 1), v(*a).sum()),
            Op::Mean(a) => Tensor::from_elem((1, 1), v(*a).sum() / v(*a).len() as f64),
            Op::RowSum(a) => v(*a).sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::Softmax(a) => softmax_rows(v(*a)),
            Op::LogSoftmax(a) => log_softmax_rows(v(*a)),
            Op::Min(a) => Tensor::from_elem((1, 1), v(*a).iter().copied().fold(f64::INFINITY, f64::min)),
            Op::Max(a) => Tensor::from_elem((1, 1), v(*a).iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Op::GatherRows(a, idx) => v(*a).select(Axis(0), idx),
            Op::SegmentMean(a, k) => {
                let x = v(*a);
                let n = x.nrows() / k;
                let mut out = Tensor::zeros((n, x.ncols()));
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    for j in 0..*k {
                        row += &x.row(i * k + j);
                    }
                    row /= *k as f64;
                }
                out
            }
            Op::MinMaxNorm(a) => {
                let x = v(*a);
                let (lo, hi) = (x[arg_extreme(x, false)], x[arg_extreme(x, true)]);
                let range = hi - lo;
                if range > 0.0 {
                    x.mapv(|e| (e - lo) / range)
                } else {
                    Tensor::zeros(x.dim())
                }
            }
        })
    }

    /// Gradient of the scalar `output` with respect to each node in `wrt`.
    pub fn backward(&self, values: &Values, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        if self.node(output)?.shape != (1, 1) {
            return Err(Error::Shape(format!("backward output node {} is not a scalar", output.0)));
        }
        self.backward_seeded(values, &[(output, Tensor::from_elem((1, 1), 1.0))], wrt)
    }

    /// Vector-Jacobian product: propagates the given output adjoints (summed)
    /// back to each node in `wrt`. Nodes with no path receive zeros.
    pub fn backward_seeded(&self, values: &Values, seeds: &[(NodeId, Tensor)], wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        for &w in wrt {
            self.node(w)?;
        }
        let mut top = 0;
        for (id, seed) in seeds {
            let node = self.node(*id)?;
            if seed.dim() != node.shape {
                return Err(shape_err("seed", seed.dim(), node.shape));
            }
            top = top.max(id.0 + 1);
        }
        if values.len() < self.nodes.len() {
            return Err(Error::NotEvaluated(values.len()));
        }
        let vals = &values.tensors;

        let lowest = wrt.iter().map(|w| w.0).min().unwrap_or(top);
        let mut adj: Vec<Option<Tensor>> = vec![None; top];
        for (id, seed) in seeds {
            accumulate(&mut adj, *id, seed.clone());
        }

        for idx in (lowest..top).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let id = NodeId(idx);
            if wrt.contains(&id) {
                adj[idx] = Some(g.clone());
            }
            let v = |n: NodeId| &vals[n.0];
            match &self.nodes[idx].op {
                Op::Input | Op::Parameter | Op::Constant(_) => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut adj, *a, &g * v(*b));
                    accumulate(&mut adj, *b, &g * v(*a));
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut adj, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut adj, *a, g);
                }
                Op::MulRow(a, r) => {
                    accumulate(&mut adj, *r, (&g * v(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut adj, *a, &g * v(*r));
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g * *c),
                Op::AddScalar(a, _) => accumulate(&mut adj, *a, g),
                Op::MatMul(a, b) => {
                    accumulate(&mut adj, *a, g.dot(&v(*b).t()));
                    accumulate(&mut adj, *b, v(*a).t().dot(&g));
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(v(*a), |gi, &x| {
                        if x <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Abs(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(v(*a), |gi, &x| *gi *= sign(x));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].shape;
                    accumulate(&mut adj, *a, Tensor::from_elem(shape, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let shape = self.nodes[a.0].shape;
                    let n = (shape.0 * shape.1) as f64;
                    accumulate(&mut adj, *a, Tensor::from_elem(shape, g[[0, 0]] / n));
                }
                Op::RowSum(a) => {
                    let shape = self.nodes[a.0].shape;
                    let mut ga = Tensor::zeros(shape);
                    for (mut row, gi) in ga.rows_mut().into_iter().zip(g.column(0)) {
                        row.fill(*gi);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = v(id);
                    let mut ga = &g * y;
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let s = row.sum();
                        row.scaled_add(-s, &yr);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let p = v(id).mapv(f64::exp);
                    let mut ga = g;
                    for (mut row, pr) in ga.rows_mut().into_iter().zip(p.rows()) {
                        let s = row.sum();
                        row.scaled_add(-s, &pr);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Min(a) | Op::Max(a) => {
                    let x = v(*a);
                    let at = arg_extreme(x, matches!(self.nodes[idx].op, Op::Max(_)));
                    let mut ga = Tensor::zeros(x.dim());
                    ga[at] = g[[0, 0]];
                    accumulate(&mut adj, *a, ga);
                }
                Op::GatherRows(a, indices) => {
                    let mut ga = Tensor::zeros(self.nodes[a.0].shape);
                    for (r, &src) in indices.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SegmentMean(a, k) => {
                    let mut ga = Tensor::zeros(self.nodes[a.0].shape);
                    let inv = 1.0 / *k as f64;
                    for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                        row.scaled_add(inv, &g.row(r / k));
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::MinMaxNorm(a) => {
                    let x = v(*a);
                    let (amin, amax) = (arg_extreme(x, false), arg_extreme(x, true));
                    let range = x[amax] - x[amin];
                    if range > 0.0 {
                        let y = v(id);
                        let mut ga = &g / range;
                        let d_min: f64 = g.iter().zip(y).map(|(gi, yi)| gi * (yi - 1.0)).sum::<f64>() / range;
                        let d_max: f64 = -g.iter().zip(y).map(|(gi, yi)| gi * yi).sum::<f64>() / range;
                        ga[amin] += d_min;
                        ga[amax] += d_max;
                        accumulate(&mut adj, *a, ga);
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                let want = self.nodes[w.0].shape;
                adj.get(w.0).cloned().flatten().unwrap_or_else(|| Tensor::zeros(want))
            })
            .collect())
    }

    /// Branch choices taken by every non-smooth node. Two evaluations with
    /// equal signatures lie on the same smooth piece of the graph.
    pub fn kink_signature(&self, values: &Values) -> Vec<i64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::Abs(a) => sig.extend(values.tensors[a.0].iter().map(|&x| sign(x) as i64)),
                Op::Min(a) => sig.push(flat_index(&values.tensors[a.0], false) as i64),
                Op::Max(a) => sig.push(flat_index(&values.tensors[a.0], true) as i64),
                Op::MinMaxNorm(a) => {
                    sig.push(flat_index(&values.tensors[a.0], false) as i64);
                    sig.push(flat_index(&values.tensors[a.0], true) as i64);
                }
                _ => {}
            }
        }
        sig
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn flat_index(x: &Tensor, largest: bool) -> usize {
    let mut best = 0;
    let mut best_value = f64::NAN;
    for (i, &e) in x.iter().enumerate() {
        if i == 0 || (largest && e > best_value) || (!largest && e < best_value) {
            best = i;
            best_value = e;
        }
    }
    best
}

fn arg_extreme(x: &Tensor, largest: bool) -> (usize, usize) {
    let i = flat_index(x, largest);
    let cols = x.ncols().max(1);
    (i / cols, i % cols)
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|e| (e - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&e| (e - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|e| e - lse);
    }
    out
}
