use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::kd::{distill_step, teacher_targets, DistillConfig, LossBreakdown, TeacherTargets};
use crate::net::{parameter_gradients, task_loss, Neighbors, Network, NetworkConfig};
use crate::pointcloud::{augment, confusion_iou, generate_scene, grid_sample, AugmentConfig, ClassIou, PointCloud, SceneSpec};
use crate::{Error, Result};

/// A labelled cloud with cached neighbourhood graphs.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub cloud: PointCloud,
    pub labels: Vec<u32>,
    neighbors: BTreeMap<usize, Neighbors>,
}

impl PreparedScene {
    pub fn new(cloud: PointCloud, ks: &[usize]) -> Result<Self> {
        let labels = cloud.labels().ok_or_else(|| Error::InvalidCloud("training cloud has no labels".into()))?.to_vec();
        let neighbors = ks.iter().map(|&k| (k, Neighbors::compute(cloud.coords(), k))).collect();
        Ok(Self { cloud, labels, neighbors })
    }

    pub fn neighbors(&self, k: usize) -> Neighbors {
        self.neighbors.get(&k).cloned().unwrap_or_else(|| Neighbors::compute(self.cloud.coords(), k))
    }
}

pub fn prepare_scenes(specs: &[SceneSpec], grid: Option<f64>, ks: &[usize]) -> Result<Vec<PreparedScene>> {
    specs
        .iter()
        .map(|spec| {
            let mut cloud = generate_scene(spec)?.cloud;
            if let Some(g) = grid {
                cloud = grid_sample(&cloud, g)?;
            }
            PreparedScene::new(cloud, ks)
        })
        .collect()
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_add(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The cloud seen at one training step, augmented when configured.
fn step_view(scene: &PreparedScene, k: usize, aug: Option<&AugmentConfig>, seed: u64) -> Result<(PointCloud, Neighbors)> {
    match aug {
        None => Ok((scene.cloud.clone(), scene.neighbors(k))),
        Some(a) => {
            let cloud = augment(&scene.cloud, a, seed)?;
            let nb = Neighbors::compute(cloud.coords(), k);
            Ok((cloud, nb))
        }
    }
}

fn accumulate(sum: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) {
    match sum {
        None => *sum = Some(grads),
        Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| *a += g),
    }
}

fn averaged(sum: Option<Vec<Tensor>>, count: usize) -> Vec<Tensor> {
    sum.unwrap_or_default().into_iter().map(|g| g / count as f64).collect()
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub network: Network,
    /// Mean cross-entropy over the training scenes before each step.
    pub losses: Vec<f64>,
    pub train_miou: f64,
}

/// Full-batch gradient descent on mean cross-entropy over all scenes.
pub fn train_network(
    cfg: &NetworkConfig,
    scenes: &[PreparedScene],
    steps: usize,
    lr: f64,
    aug: Option<&AugmentConfig>,
) -> Result<TrainResult> {
    if scenes.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    let mut net = Network::init(cfg.clone())?;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut sum = None;
        let mut loss_sum = 0.0;
        for (i, scene) in scenes.iter().enumerate() {
            let (cloud, nb) = step_view(scene, cfg.neighbors, aug, mix(cfg.seed, (step * scenes.len() + i) as u64))?;
            let mut trace = net.forward_with(&cloud, &nb)?;
            let loss = task_loss(&mut trace, &scene.labels)?;
            loss_sum += trace.scalar(loss)?;
            accumulate(&mut sum, parameter_gradients(&trace, loss)?);
        }
        let mean = loss_sum / scenes.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence(format!("training loss became {mean} at step {step}")));
        }
        losses.push(mean);
        net.apply_gradients(&averaged(sum, scenes.len()), lr)?;
    }
    let train_miou = evaluate(&net, scenes)?.miou;
    Ok(TrainResult { network: net, losses, train_miou })
}

#[derive(Clone, Debug)]
pub struct DistillResult {
    pub network: Network,
    /// Scene-averaged loss breakdown before each step.
    pub history: Vec<LossBreakdown>,
    pub train_miou: f64,
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    let lambdas = parts[0].lambdas;
    let (topo, grad, kld, seg) = (avg(|b| b.topo), avg(|b| b.grad), avg(|b| b.kld), avg(|b| b.seg));
    LossBreakdown {
        topo,
        grad,
        kld,
        seg,
        total: LossBreakdown::compose(topo, grad, kld, seg, lambdas),
        lambdas,
        norms: crate::kd::GradNorms {
            topo: avg(|b| b.norms.topo),
            topo_clamped: avg(|b| b.norms.topo_clamped),
            feat: avg(|b| b.norms.feat),
            params: avg(|b| b.norms.params),
        },
        tie_events: parts.iter().map(|b| b.tie_events).sum(),
        clamped: parts.iter().any(|b| b.clamped),
    }
}

/// Trains a student from `student_cfg` against a frozen teacher.
pub fn distill_network(
    student_cfg: &NetworkConfig,
    teacher: &Network,
    scenes: &[PreparedScene],
    cfg: &DistillConfig,
    steps: usize,
    lr: f64,
    aug: Option<&AugmentConfig>,
) -> Result<DistillResult> {
    if scenes.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    cfg.validate()?;
    let tk = teacher.config().neighbors;
    let sk = student_cfg.neighbors;
    // without augmentation the teacher side is the same every step
    let fixed: Option<Vec<TeacherTargets>> = match aug {
        None => Some(
            scenes
                .iter()
                .map(|s| teacher_targets(teacher, &s.cloud, &s.neighbors(tk), &s.labels))
                .collect::<Result<_>>()?,
        ),
        Some(_) => None,
    };
    let mut net = Network::init(student_cfg.clone())?;
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut sum = None;
        let mut parts = Vec::with_capacity(scenes.len());
        for (i, scene) in scenes.iter().enumerate() {
            let step_seed = mix(student_cfg.seed, (step * scenes.len() + i) as u64);
            let out = match &fixed {
                Some(t) => distill_step(&net, &t[i], &scene.cloud, &scene.neighbors(sk), &scene.labels, cfg, step_seed)?,
                None => {
                    let (cloud, nb_t) = step_view(scene, tk, aug, step_seed)?;
                    let nb_s = if sk == tk { nb_t.clone() } else { Neighbors::compute(cloud.coords(), sk) };
                    let t = teacher_targets(teacher, &cloud, &nb_t, &scene.labels)?;
                    distill_step(&net, &t, &cloud, &nb_s, &scene.labels, cfg, step_seed)?
                }
            };
            parts.push(out.breakdown);
            accumulate(&mut sum, out.grads);
        }
        let b = mean_breakdown(&parts);
        if !b.total.is_finite() {
            return Err(Error::Divergence(format!("distillation loss became {} at step {step}", b.total)));
        }
        history.push(b);
        net.apply_gradients(&averaged(sum, scenes.len()), lr)?;
    }
    let train_miou = evaluate(&net, scenes)?.miou;
    Ok(DistillResult { network: net, history, train_miou })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_scene: Vec<f64>,
    /// mIoU of the pooled confusion over all scenes.
    pub miou: f64,
    pub per_class: Vec<ClassIou>,
}

/// Deterministic inference without augmentation.
pub fn evaluate(net: &Network, scenes: &[PreparedScene]) -> Result<EvalReport> {
    let k = net.config().num_classes;
    let mut pooled = vec![ClassIou::default(); k];
    let mut per_scene = Vec::with_capacity(scenes.len());
    for scene in scenes {
        if scene.cloud.num_classes() != k {
            return Err(Error::Config(format!(
                "network predicts {k} classes, scene has {}",
                scene.cloud.num_classes()
            )));
        }
        let trace = net.forward_with(&scene.cloud, &scene.neighbors(net.config().neighbors))?;
        let pred = crate::net::argmax_rows(trace.logits()?);
        let counts = confusion_iou(&pred, &scene.labels, k)?;
        per_scene.push(crate::pointcloud::mean_iou(&counts)?);
        for (p, c) in pooled.iter_mut().zip(&counts) {
            p.intersection += c.intersection;
            p.union += c.union;
        }
    }
    Ok(EvalReport { per_scene, miou: crate::pointcloud::mean_iou(&pooled)?, per_class: pooled })
}
