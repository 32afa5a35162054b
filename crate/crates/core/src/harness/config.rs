use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::kd::DistillConfig;
use crate::net::NetworkConfig;
use crate::pointcloud::{AugmentConfig, SceneShape, SceneSpec};
use crate::{Error, Result};

/// A family of synthetic scenes split into training and evaluation sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub shape: SceneShape,
    pub num_classes: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub seed: u64,
    /// Optional voxel size for grid sampling before training.
    #[serde(default)]
    pub grid: Option<f64>,
}

/// Evaluation scenes start this far from the training seeds.
const EVAL_SEED_OFFSET: u64 = 1_000_003;

impl BenchmarkConfig {
    pub fn train_specs(&self) -> Vec<SceneSpec> {
        self.specs(self.seed, self.train_scenes)
    }

    pub fn eval_specs(&self) -> Vec<SceneSpec> {
        self.specs(self.seed.wrapping_add(EVAL_SEED_OFFSET), self.eval_scenes)
    }

    fn specs(&self, base: u64, count: usize) -> Vec<SceneSpec> {
        (0..count as u64)
            .map(|i| SceneSpec { shape: self.shape.clone(), num_classes: self.num_classes, seed: base.wrapping_add(i) })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub teacher_lr: f64,
    pub student_lr: f64,
    pub teacher_steps: usize,
    pub student_steps: usize,
    /// Seeds per comparison; each seed re-initialises the student.
    pub seeds: usize,
    pub augment: Option<AugmentConfig>,
    /// Worker threads for grid cells; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { teacher_lr: 0.03, student_lr: 0.05, teacher_steps: 800, student_steps: 400, seeds: 5, augment: None, threads: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub benchmark: BenchmarkConfig,
    pub teacher: NetworkConfig,
    pub student: NetworkConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Four-class planes-and-objects benchmark with the desk-scale networks.
    pub fn desk_default() -> Self {
        let k = 4;
        Self {
            seed: 0,
            benchmark: BenchmarkConfig {
                shape: SceneShape::PlanesObjects { points: 384, objects: 4, extent: 6.0 },
                num_classes: k,
                train_scenes: 8,
                eval_scenes: 8,
                seed: 100,
                grid: None,
            },
            teacher: NetworkConfig::teacher(k, 1),
            student: NetworkConfig::student(k, 2),
            distill: DistillConfig { alpha: 0.03, ..DistillConfig::default() },
            optim: OptimConfig::default(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.student.validate()?;
        self.distill.validate()?;
        let k = self.benchmark.num_classes;
        if k == 0 {
            return Err(Error::Config("benchmark needs at least one class".into()));
        }
        if self.teacher.num_classes != k || self.student.num_classes != k {
            return Err(Error::Config(format!(
                "class counts differ: benchmark {k}, teacher {}, student {}",
                self.teacher.num_classes, self.student.num_classes
            )));
        }
        if self.benchmark.train_scenes == 0 {
            return Err(Error::Config("need at least one training scene".into()));
        }
        if let Some(g) = self.benchmark.grid {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("grid size must be positive, got {g}")));
            }
        }
        let o = &self.optim;
        for (name, lr) in [("teacher_lr", o.teacher_lr), ("student_lr", o.student_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if o.seeds == 0 {
            return Err(Error::Config("need at least one seed".into()));
        }
        if let Some(a) = &o.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config serialisation: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
