use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use super::{clamp_topo_gradient, frobenius, importance_weights, saliency_map, scale_features, topo_loss};
use crate::autodiff::{Bindings, Graph, NodeId, Tensor};
use crate::net::{activation_gradients, pair_stages, task_loss, Neighbors, Network};
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KldDirection {
    /// KL(teacher ‖ student)
    #[default]
    TeacherStudent,
    /// KL(student ‖ teacher)
    StudentTeacher,
}

/// Weights and switches of the distillation objective
/// `topo + λ1·grad + λ2·kld + λ3·seg`.
///
/// The clamp bounds the topology gradient on the topology stage by
/// `alpha` times the norm of the saliency-alignment (`grad`) gradient on
/// the same stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub lambda_grad: f64,
    pub lambda_kld: f64,
    pub lambda_seg: f64,
    pub temperature: f64,
    pub kld_direction: KldDirection,
    pub alpha: f64,
    pub topo_enabled: bool,
    /// Rows sampled for the persistence diagrams.
    pub topo_subsample: usize,
    pub topo_maxdim: usize,
    /// Student stage feeding the topology loss; `None` is the last stage.
    pub topo_stage: Option<usize>,
    /// Student stages aligned by saliency; `None` is every stage.
    pub align_stages: Option<Vec<usize>>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda_grad: 1.0,
            lambda_kld: 1.0,
            lambda_seg: 1.0,
            temperature: 1.0,
            kld_direction: KldDirection::TeacherStudent,
            alpha: 1.0,
            topo_enabled: true,
            topo_subsample: 128,
            topo_maxdim: 0,
            topo_stage: None,
            align_stages: None,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_grad", self.lambda_grad), ("lambda_kld", self.lambda_kld), ("lambda_seg", self.lambda_seg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.topo_subsample < 2 {
            return Err(Error::Config("topology subsample needs at least 2 rows".into()));
        }
        if self.topo_maxdim > crate::tda::MAX_HOMOLOGY_DIM {
            return Err(Error::Config(format!("topo_maxdim {} exceeds {}", self.topo_maxdim, crate::tda::MAX_HOMOLOGY_DIM)));
        }
        Ok(())
    }

    /// (student stage, teacher stage) pairs used by the alignment term.
    fn aligned_pairs(&self, student_stages: usize, teacher_stages: usize) -> Result<Vec<(usize, usize)>> {
        let pairs = pair_stages(student_stages, teacher_stages);
        match &self.align_stages {
            None => Ok(pairs),
            Some(sel) => sel
                .iter()
                .map(|&s| {
                    pairs
                        .get(s)
                        .copied()
                        .ok_or_else(|| Error::Config(format!("aligned stage {s} out of range ({student_stages} stages)")))
                })
                .collect(),
        }
    }

    fn topo_pair(&self, student_stages: usize, teacher_stages: usize) -> Result<(usize, usize)> {
        let s = self.topo_stage.unwrap_or(student_stages - 1);
        pair_stages(student_stages, teacher_stages)
            .get(s)
            .copied()
            .ok_or_else(|| Error::Config(format!("topology stage {s} out of range ({student_stages} stages)")))
    }
}

/// Everything the student objective needs from the frozen teacher on one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub features: Vec<Tensor>,
    /// Saliency map per teacher stage, weighted by the teacher's own
    /// cross-entropy gradients.
    pub saliency: Vec<Array1<f64>>,
    pub logits: Tensor,
}

pub fn teacher_targets(teacher: &Network, cloud: &PointCloud, nbrs: &Neighbors, labels: &[u32]) -> Result<TeacherTargets> {
    let mut trace = teacher.forward_with(cloud, nbrs)?;
    let loss = task_loss(&mut trace, labels)?;
    let grads = activation_gradients(&trace, loss)?;
    let mut features = Vec::with_capacity(grads.len());
    let mut saliency = Vec::with_capacity(grads.len());
    for (l, g) in grads.iter().enumerate() {
        let f = trace.feature(l)?.clone();
        saliency.push(saliency_map(&scale_features(&f, &importance_weights(g)?)?)?);
        features.push(f);
    }
    Ok(TeacherTargets { features, saliency, logits: trace.logits()?.clone() })
}

/// Norms of the gradients involved in one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    /// Topology gradient on the topology stage, before the clamp.
    pub topo: f64,
    pub topo_clamped: f64,
    /// Alignment-loss gradient on the topology stage (the clamp reference).
    pub feat: f64,
    /// Full student parameter gradient.
    pub params: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub topo: f64,
    pub grad: f64,
    pub kld: f64,
    pub seg: f64,
    pub total: f64,
    /// (λ1, λ2, λ3) used to form `total`.
    pub lambdas: [f64; 3],
    pub norms: GradNorms,
    pub tie_events: usize,
    pub clamped: bool,
}

impl LossBreakdown {
    pub fn compose(topo: f64, grad: f64, kld: f64, seg: f64, lambdas: [f64; 3]) -> f64 {
        topo + lambdas[0] * grad + lambdas[1] * kld + lambdas[2] * seg
    }

    pub fn recompute_total(&self) -> f64 {
        Self::compose(self.topo, self.grad, self.kld, self.seg, self.lambdas)
    }
}

#[derive(Clone, Debug)]
pub struct DistillStep {
    pub breakdown: LossBreakdown,
    /// ∂objective/∂θ for the student, topology part clamped.
    pub grads: Vec<Tensor>,
}

/// Softened teacher distribution pieces evaluated through the same ops as
/// the student graph, so identical logits cancel exactly.
fn softened(logits: &Tensor, t: f64) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let z = g.input("z", logits.dim());
    let scaled = g.scale(z, 1.0 / t)?;
    let p = g.softmax(scaled)?;
    let lp = g.log_softmax(scaled)?;
    let v = g.evaluate(&Bindings::new().with(z, logits.clone()))?;
    Ok((v.get(p)?.clone(), v.get(lp)?.clone()))
}

fn build_kld(g: &mut Graph, student_logits: NodeId, teacher_logits: &Tensor, cfg: &DistillConfig) -> Result<NodeId> {
    let t = cfg.temperature;
    let n = teacher_logits.nrows() as f64;
    let (p_t, lp_t) = softened(teacher_logits, t)?;
    let scaled = g.scale(student_logits, 1.0 / t)?;
    let lq = g.log_softmax(scaled)?;
    // Σ p (log p − log q), zero terms where p underflows
    let kl = match cfg.kld_direction {
        KldDirection::TeacherStudent => {
            let lp = g.constant(lp_t.mapv(|v| if v == f64::NEG_INFINITY { 0.0 } else { v }));
            let diff = g.sub(lp, lq)?;
            let p = g.constant(p_t);
            let prod = g.mul(diff, p)?;
            g.sum(prod)?
        }
        KldDirection::StudentTeacher => {
            let q = g.softmax(scaled)?;
            let lp = g.constant(lp_t);
            let diff = g.sub(lq, lp)?;
            let prod = g.mul(diff, q)?;
            g.sum(prod)?
        }
    };
    g.scale(kl, t * t / n)
}

/// One evaluation of the distillation objective for the student on one
/// cloud, with its parameter gradient. Teacher quantities are constants and
/// the student's importance weights are detached from the graph.
pub fn distill_step(
    student: &Network,
    targets: &TeacherTargets,
    cloud: &PointCloud,
    nbrs: &Neighbors,
    labels: &[u32],
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DistillStep> {
    cfg.validate()?;
    let mut trace = student.forward_with(cloud, nbrs)?;
    let n = cloud.len();
    let (ls, lt) = (trace.num_stages(), targets.features.len());
    if targets.logits.dim() != trace.logits()?.dim() {
        return Err(Error::Shape(format!(
            "teacher logits {:?} vs student logits {:?}",
            targets.logits.dim(),
            trace.logits()?.dim()
        )));
    }
    let seg = task_loss(&mut trace, labels)?;
    let act = activation_gradients(&trace, seg)?;
    let weights = act.iter().map(importance_weights).collect::<Result<Vec<_>>>()?;

    let pairs = cfg.aligned_pairs(ls, lt)?;
    let feats = trace.feature_nodes().to_vec();
    let logits = trace.logits_node();
    let g = trace.graph_mut();
    let mut align: Option<NodeId> = None;
    for &(s, t) in &pairs {
        let w = g.constant(weights[s].view().insert_axis(Axis(0)).to_owned());
        let scaled = g.mul_row(feats[s], w)?;
        let mag = g.abs(scaled)?;
        let rows = g.row_sum(mag)?;
        let m_s = g.min_max_norm(rows)?;
        let m_t = g.constant(targets.saliency[t].view().insert_axis(Axis(1)).to_owned());
        let diff = g.sub(m_t, m_s)?;
        let dist = g.abs(diff)?;
        let stage = g.sum(dist)?;
        align = Some(match align {
            None => stage,
            Some(acc) => g.add(acc, stage)?,
        });
    }
    let grad_loss = match align {
        Some(a) => g.scale(a, 1.0 / n as f64)?,
        None => g.constant(Tensor::zeros((1, 1))),
    };
    let kld = build_kld(g, logits, &targets.logits, cfg)?;
    let a = g.scale(grad_loss, cfg.lambda_grad)?;
    let b = g.scale(kld, cfg.lambda_kld)?;
    let c = g.scale(seg, cfg.lambda_seg)?;
    let ab = g.add(a, b)?;
    let objective = g.add(ab, c)?;
    trace.extend()?;

    let lambdas = [cfg.lambda_grad, cfg.lambda_kld, cfg.lambda_seg];
    let (grad_v, kld_v, seg_v) = (trace.scalar(grad_loss)?, trace.scalar(kld)?, trace.scalar(seg)?);
    let mut norms = GradNorms::default();
    let mut seeds = vec![(objective, Tensor::from_elem((1, 1), 1.0))];
    let (mut topo_v, mut tie_events, mut clamped) = (0.0, 0, false);

    if cfg.topo_enabled {
        let (s_stage, t_stage) = cfg.topo_pair(ls, lt)?;
        let m = cfg.topo_subsample.min(n);
        let topo = topo_loss(&targets.features[t_stage], trace.feature(s_stage)?, m, cfg.topo_maxdim, seed)?;
        let g_feat = trace.graph().backward(trace.values()?, grad_loss, &[feats[s_stage]])?.remove(0);
        let limited = clamp_topo_gradient(&topo.grad, &g_feat, cfg.alpha)?;
        norms.topo = frobenius(&topo.grad);
        norms.topo_clamped = frobenius(&limited);
        norms.feat = frobenius(&g_feat);
        clamped = norms.topo_clamped < norms.topo;
        topo_v = topo.value;
        tie_events = topo.tie_events;
        seeds.push((feats[s_stage], limited));
    }

    let grads = trace.graph().backward_seeded(trace.values()?, &seeds, trace.param_nodes())?;
    norms.params = grads.iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    let breakdown = LossBreakdown {
        topo: topo_v,
        grad: grad_v,
        kld: kld_v,
        seg: seg_v,
        total: LossBreakdown::compose(topo_v, grad_v, kld_v, seg_v, lambdas),
        lambdas,
        norms,
        tie_events,
        clamped,
    };
    if !breakdown.total.is_finite() || !norms_finite(&breakdown.norms) {
        return Err(Error::Divergence(format!("non-finite distillation loss {breakdown:?}")));
    }
    Ok(DistillStep { breakdown, grads })
}

fn norms_finite(n: &GradNorms) -> bool {
    [n.topo, n.topo_clamped, n.feat, n.params].iter().all(|v| v.is_finite())
}
