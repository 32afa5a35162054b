//! Per-point segmentation networks with per-stage feature maps.
//!
//! Every layer is `relu(h·W_self + mean_kNN(h)·W_nbr + b)`; a stage is a
//! run of such layers and its feature map is the output of its last layer.
//! A linear head maps the last stage to class logits. The neighbourhood
//! graph is built once per forward pass from the raw coordinates.

mod checkpoint;
mod neighbors;

pub use checkpoint::{from_bytes, load, save, to_bytes, CHECKPOINT_MAGIC};
pub use neighbors::Neighbors;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Graph, NodeId, Tensor, Values};
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

/// Input channels: centred coordinates scaled to unit maximum radius.
pub const INPUT_CHANNELS: usize = 3;
/// Inputs are coordinates in metres times this factor.
pub const INPUT_SCALE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depths: Vec<usize>,
    pub channels: Vec<usize>,
    /// Neighbourhood size for mean aggregation.
    pub neighbors: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn teacher(num_classes: usize, seed: u64) -> Self {
        Self { depths: vec![2, 2, 2, 2, 1], channels: vec![8, 16, 32, 64, 128], neighbors: 8, num_classes, seed }
    }

    pub fn student(num_classes: usize, seed: u64) -> Self {
        Self { depths: vec![1, 1, 1, 2, 1], channels: vec![4, 4, 8, 16, 32], neighbors: 8, num_classes, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.depths.len() != self.channels.len() {
            return Err(Error::Config(format!(
                "depths ({}) and channels ({}) must be non-empty and of equal length",
                self.depths.len(),
                self.channels.len()
            )));
        }
        if self.depths.contains(&0) || self.channels.contains(&0) {
            return Err(Error::Config("stage depths and channels must be positive".into()));
        }
        if self.neighbors == 0 {
            return Err(Error::Config("neighbourhood size must be at least 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    /// (c_in, c_out) of every aggregation layer in declaration order.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut c_in = INPUT_CHANNELS;
        let mut out = Vec::new();
        for (&d, &c) in self.depths.iter().zip(&self.channels) {
            for _ in 0..d {
                out.push((c_in, c));
                c_in = c;
            }
        }
        out
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let body: usize = self.layer_shapes().iter().map(|&(i, o)| 2 * i * o + o).sum();
        let last = *self.channels.last().unwrap_or(&0);
        body + last * self.num_classes + self.num_classes
    }

    /// Names and shapes of all parameter tensors in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for (l, (i, o)) in self.layer_shapes().into_iter().enumerate() {
            out.push((format!("layer{l}.w_self"), (i, o)));
            out.push((format!("layer{l}.w_nbr"), (i, o)));
            out.push((format!("layer{l}.bias"), (1, o)));
        }
        let last = *self.channels.last().unwrap_or(&0);
        out.push(("head.w".into(), (last, self.num_classes)));
        out.push(("head.bias".into(), (1, self.num_classes)));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: Vec<Tensor>,
}

impl Network {
    /// Weights ~ N(0, 1/c_in) (two summed branches give He-like scale), biases zero.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with("bias") {
                    return Ok(Array2::zeros(shape));
                }
                let normal = Normal::new(0.0, (1.0 / shape.0 as f64).sqrt())
                    .map_err(|e| Error::Config(format!("init distribution: {e}")))?;
                Ok(Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng)))
            })
            .collect::<Result<Vec<_>>>()?;
        log::debug!("initialised network with {} parameters", config.param_count());
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking their shapes.
    pub fn from_params(config: NetworkConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::LengthMismatch(shapes.len(), params.len()));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.dim() != *shape {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, got {:?}", p.dim())));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Plain gradient descent step.
    pub fn apply_gradients(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::LengthMismatch(self.params.len(), grads.len()));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.dim(), p.dim())));
            }
            p.scaled_add(-lr, g);
        }
        if self.params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence("non-finite parameter after update".into()));
        }
        Ok(())
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<ForwardTrace> {
        let nbrs = Neighbors::compute(cloud.coords(), self.config.neighbors);
        self.forward_with(cloud, &nbrs)
    }

    /// Forward pass with a precomputed neighbourhood graph.
    pub fn forward_with(&self, cloud: &PointCloud, nbrs: &Neighbors) -> Result<ForwardTrace> {
        let n = cloud.len();
        if nbrs.num_points() != n {
            return Err(Error::LengthMismatch(n, nbrs.num_points()));
        }
        let mut graph = Graph::new();
        let input = graph.input("points", (n, INPUT_CHANNELS));
        let params: Vec<NodeId> =
            self.config.param_shapes().iter().map(|(name, shape)| graph.parameter(name, *shape)).collect();

        let mut h = input;
        let mut features = Vec::with_capacity(self.config.num_stages());
        let mut layer = 0;
        for &depth in &self.config.depths {
            for _ in 0..depth {
                let (ws, wn, b) = (params[3 * layer], params[3 * layer + 1], params[3 * layer + 2]);
                let gathered = graph.gather_rows(h, nbrs.flat().to_vec())?;
                let agg = graph.segment_mean(gathered, nbrs.k())?;
                let own = graph.matmul(h, ws)?;
                let other = graph.matmul(agg, wn)?;
                let sum = graph.add(own, other)?;
                let biased = graph.add_row(sum, b)?;
                h = graph.relu(biased)?;
                layer += 1;
            }
            features.push(h);
        }
        let head = graph.matmul(h, params[3 * layer])?;
        let logits = graph.add_row(head, params[3 * layer + 1])?;

        let mut bindings = Bindings::new();
        bindings.bind(input, input_features(cloud));
        for (&id, value) in params.iter().zip(&self.params) {
            bindings.bind(id, value.clone());
        }
        let values = graph.evaluate(&bindings)?;
        Ok(ForwardTrace { graph, bindings, values: Some(values), features, logits, params })
    }

    /// Arg-max class per point; ties go to the lowest class index.
    pub fn predict(&self, cloud: &PointCloud) -> Result<Vec<u32>> {
        let trace = self.forward(cloud)?;
        Ok(argmax_rows(trace.logits()?))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<u32> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

/// Per-point inputs: horizontal offset from the centroid and height above
/// the lowest point, in units of `1 / INPUT_SCALE` metres.
pub fn input_features(cloud: &PointCloud) -> Tensor {
    let centred = cloud.centered_coords();
    let floor = centred.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    Array2::from_shape_fn((centred.len(), INPUT_CHANNELS), |(i, j)| {
        let v = if j == 2 { centred[i][2] - floor } else { centred[i][j] };
        v * INPUT_SCALE
    })
}

/// A network evaluation that keeps its graph for backward passes. Loss
/// heads may be appended to [`ForwardTrace::graph_mut`] and evaluated with
/// [`ForwardTrace::extend`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    graph: Graph,
    bindings: Bindings,
    values: Option<Values>,
    features: Vec<NodeId>,
    logits: NodeId,
    params: Vec<NodeId>,
}

impl ForwardTrace {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn values(&self) -> Result<&Values> {
        self.values.as_ref().ok_or(Error::TraceConsumed)
    }

    /// Evaluates nodes appended since the last evaluation.
    pub fn extend(&mut self) -> Result<()> {
        let values = self.values.as_mut().ok_or(Error::TraceConsumed)?;
        self.graph.extend(values, &self.bindings)
    }

    /// Drops forward values; every later query fails with `TraceConsumed`.
    pub fn release(&mut self) {
        self.values = None;
    }

    pub fn num_stages(&self) -> usize {
        self.features.len()
    }

    pub fn feature_nodes(&self) -> &[NodeId] {
        &self.features
    }

    pub fn logits_node(&self) -> NodeId {
        self.logits
    }

    pub fn param_nodes(&self) -> &[NodeId] {
        &self.params
    }

    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn feature(&self, stage: usize) -> Result<&Tensor> {
        let id = *self
            .features
            .get(stage)
            .ok_or_else(|| Error::Config(format!("stage {stage} out of range ({} stages)", self.features.len())))?;
        self.values()?.get(id)
    }

    pub fn logits(&self) -> Result<&Tensor> {
        self.values()?.get(self.logits)
    }

    pub fn scalar(&self, node: NodeId) -> Result<f64> {
        self.values()?.scalar(node)
    }
}

fn check_labels(labels: &[u32], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::LengthMismatch(n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    Ok(())
}

pub(crate) fn one_hot(labels: &[u32], k: usize) -> Tensor {
    let mut t = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l as usize]] = 1.0;
    }
    t
}

/// Appends mean per-point cross-entropy to the trace and evaluates it.
pub fn task_loss(trace: &mut ForwardTrace, labels: &[u32]) -> Result<NodeId> {
    trace.values()?;
    let (n, k) = trace.graph.shape(trace.logits)?;
    check_labels(labels, n, k)?;
    let g = &mut trace.graph;
    let logp = g.log_softmax(trace.logits)?;
    let target = g.constant(one_hot(labels, k));
    let picked = g.mul(logp, target)?;
    let total = g.sum(picked)?;
    let loss = g.scale(total, -1.0 / n as f64)?;
    trace.extend()?;
    Ok(loss)
}

/// Mean cross-entropy computed directly from logits.
pub fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<f64> {
    let (n, k) = logits.dim();
    check_labels(labels, n, k)?;
    let mut total = 0.0;
    for (row, &l) in logits.rows().into_iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l as usize];
    }
    Ok(total / n as f64)
}

/// ∂loss/∂F^l for every stage.
pub fn activation_gradients(trace: &ForwardTrace, loss: NodeId) -> Result<Vec<Tensor>> {
    trace.graph.backward(trace.values()?, loss, &trace.features)
}

/// ∂loss/∂θ in declaration order.
pub fn parameter_gradients(trace: &ForwardTrace, loss: NodeId) -> Result<Vec<Tensor>> {
    trace.graph.backward(trace.values()?, loss, &trace.params)
}

/// Pairs student stage i with teacher stage round(i·L_T/L_S), counting
/// stages from 1, so the last stages always meet. Returns 0-based pairs.
pub fn pair_stages(student_stages: usize, teacher_stages: usize) -> Vec<(usize, usize)> {
    (1..=student_stages)
        .map(|i| {
            let t = (i as f64 * teacher_stages as f64 / student_stages as f64).round() as usize;
            (i - 1, t.clamp(1, teacher_stages) - 1)
        })
        .collect()
}
