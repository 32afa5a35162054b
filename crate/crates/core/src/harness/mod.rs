//! Orchestration: scene preparation, teacher training, distillation,
//! the component ablation grid, evaluation and reports.

mod ablation;
mod config;
mod report;
mod train;

pub use ablation::{ablation_grid, median, AblationReport, AblationRow, CellResult, RowSummary};
pub use config::{BenchmarkConfig, OptimConfig, RunConfig};
pub use report::{ModelSummary, Reporter, RunReport, REPORT_FILE, SUMMARY_FILE};
pub use train::{distill_network, evaluate, prepare_scenes, train_network, DistillResult, EvalReport, PreparedScene, TrainResult};

use std::time::Instant;

use serde_json::json;

use crate::net::Network;
use crate::Result;

/// Validated config with its training and evaluation scenes.
pub struct Session {
    pub config: RunConfig,
    pub train: Vec<PreparedScene>,
    pub eval: Vec<PreparedScene>,
}

impl Session {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let ks = [config.teacher.neighbors, config.student.neighbors];
        let b = &config.benchmark;
        let train = prepare_scenes(&b.train_specs(), b.grid, &ks)?;
        let eval = prepare_scenes(&b.eval_specs(), b.grid, &ks)?;
        Ok(Self { config, train, eval })
    }

    pub fn train_teacher(&self) -> Result<TrainResult> {
        let o = &self.config.optim;
        train_network(&self.config.teacher, &self.train, o.teacher_steps, o.teacher_lr, o.augment.as_ref())
    }

    /// Student trained on the configured objective against `teacher`.
    pub fn distill(&self, teacher: &Network) -> Result<DistillResult> {
        let o = &self.config.optim;
        distill_network(
            &self.config.student,
            teacher,
            &self.train,
            &self.config.distill,
            o.student_steps,
            o.student_lr,
            o.augment.as_ref(),
        )
    }

    pub fn ablate(&self, teacher: &Network, teacher_train_miou: f64) -> Result<AblationReport> {
        ablation_grid(&self.config, teacher, teacher_train_miou, &self.train, &self.eval)
    }

    pub fn summarize(&self, name: &str, net: &Network, train_miou: f64, final_loss: Option<f64>) -> Result<ModelSummary> {
        let eval = if self.eval.is_empty() { None } else { Some(evaluate(net, &self.eval)?) };
        Ok(ModelSummary { name: name.into(), param_count: net.param_count(), train_miou, eval, final_loss })
    }
}

/// Teacher training then the full ablation grid, with reports.
pub fn run_ablation(config: RunConfig, reporter: &mut Reporter) -> Result<RunReport> {
    let mut report = RunReport::new(config.clone());
    reporter.record("config", json!({ "config": &config, "version": env!("CARGO_PKG_VERSION") }))?;
    let clock = Instant::now();
    let session = Session::new(config)?;
    report.timings.insert("prepare".into(), clock.elapsed().as_secs_f64());

    let clock = Instant::now();
    let teacher = session.train_teacher()?;
    report.timings.insert("teacher".into(), clock.elapsed().as_secs_f64());
    let summary = session.summarize("teacher", &teacher.network, teacher.train_miou, teacher.losses.last().copied())?;
    reporter.record("model", json!({ "model": &summary }))?;
    report.models.push(summary);

    let clock = Instant::now();
    let grid = session.ablate(&teacher.network, teacher.train_miou)?;
    report.timings.insert("ablation".into(), clock.elapsed().as_secs_f64());
    for cell in &grid.cells {
        reporter.steps(&cell.id(), &cell.history)?;
        reporter.record("cell", json!({ "cell": cell.id(), "result": cell }))?;
    }
    reporter.record("ablation", json!({ "rows": &grid.rows, "no_kd_median": grid.no_kd_median }))?;
    report.ablation = Some(grid);
    reporter.flush()?;
    if let Some(dir) = reporter.dir() {
        report.write(dir)?;
    }
    Ok(report)
}
