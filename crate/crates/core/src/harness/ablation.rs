use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::{distill_network, evaluate, train_network, PreparedScene};
use crate::kd::{DistillConfig, LossBreakdown};
use crate::net::{Network, NetworkConfig};
use crate::{Error, Result};

/// Rows of the component grid. Every row keeps the softened-logit and
/// segmentation terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationRow {
    KldSeg,
    Topo,
    Grad,
    TopoGrad,
}

impl AblationRow {
    pub const ALL: [AblationRow; 4] = [AblationRow::KldSeg, AblationRow::Topo, AblationRow::Grad, AblationRow::TopoGrad];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::KldSeg => "kld+seg",
            AblationRow::Topo => "+topo",
            AblationRow::Grad => "+grad",
            AblationRow::TopoGrad => "+topo+grad",
        }
    }

    /// The base config with this row's components switched on or off.
    pub fn apply(self, base: &DistillConfig) -> DistillConfig {
        let grad = matches!(self, AblationRow::Grad | AblationRow::TopoGrad);
        let topo = matches!(self, AblationRow::Topo | AblationRow::TopoGrad);
        DistillConfig {
            lambda_grad: if grad { base.lambda_grad } else { 0.0 },
            topo_enabled: topo,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// `None` is the student trained on cross-entropy alone.
    pub row: Option<AblationRow>,
    pub seed: u64,
    pub train_miou: f64,
    pub eval_miou: f64,
    pub final_loss: Option<LossBreakdown>,
    /// Largest |total − recomposed total| over the run.
    pub identity_residual: f64,
    #[serde(skip)]
    pub history: Vec<LossBreakdown>,
}

impl CellResult {
    pub fn id(&self) -> String {
        format!("{}/seed{}", self.row.map_or("no-kd", AblationRow::name), self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub row: AblationRow,
    pub per_seed: Vec<f64>,
    pub median_miou: f64,
    /// Median over seeds of (row − kld+seg) on the same seed.
    pub median_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub teacher_train_miou: f64,
    pub teacher_eval_miou: f64,
    pub no_kd: Vec<f64>,
    pub no_kd_median: f64,
    pub rows: Vec<RowSummary>,
    pub cells: Vec<CellResult>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl AblationReport {
    pub fn row(&self, row: AblationRow) -> Option<&RowSummary> {
        self.rows.iter().find(|r| r.row == row)
    }

    /// Median over seeds of (a − b) on the same seed.
    pub fn paired_delta(&self, a: AblationRow, b: AblationRow) -> Option<f64> {
        let (a, b) = (self.row(a)?, self.row(b)?);
        let d: Vec<f64> = a.per_seed.iter().zip(&b.per_seed).map(|(x, y)| x - y).collect();
        Some(median(&d))
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "  teacher mIoU train {:.4} eval {:.4}; no-KD student median {:.4}\n  {:<12} {:>8} {:>9}  per-seed\n",
            self.teacher_train_miou, self.teacher_eval_miou, self.no_kd_median, "row", "median", "Δ(paired)"
        );
        for r in &self.rows {
            let seeds: Vec<String> = r.per_seed.iter().map(|v| format!("{v:.4}")).collect();
            s += &format!("  {:<12} {:>8.4} {:>+9.4}  {}\n", r.row.name(), r.median_miou, r.median_delta, seeds.join(" "));
        }
        s
    }
}

fn student_for_seed(base: &NetworkConfig, seed: u64) -> NetworkConfig {
    NetworkConfig { seed: base.seed.wrapping_add(seed), ..base.clone() }
}

/// Runs every (row, seed) cell plus a cross-entropy-only student per seed.
/// All rows of one seed share the student initialisation. Cells run on
/// worker threads; results are merged by cell index.
pub fn ablation_grid(
    cfg: &RunConfig,
    teacher: &Network,
    teacher_train_miou: f64,
    train: &[PreparedScene],
    eval: &[PreparedScene],
) -> Result<AblationReport> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.optim.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut jobs: Vec<(Option<AblationRow>, u64)> = Vec::new();
    for &seed in &seeds {
        jobs.push((None, seed));
        for row in AblationRow::ALL {
            jobs.push((Some(row), seed));
        }
    }
    let aug = cfg.optim.augment.as_ref();
    let run = |(row, seed): (Option<AblationRow>, u64)| -> Result<CellResult> {
        let student = student_for_seed(&cfg.student, seed);
        let (net, train_miou, history) = match row {
            None => {
                let r = train_network(&student, train, cfg.optim.student_steps, cfg.optim.student_lr, aug)?;
                (r.network, r.train_miou, Vec::new())
            }
            Some(row) => {
                let dcfg = row.apply(&cfg.distill);
                let r = distill_network(&student, teacher, train, &dcfg, cfg.optim.student_steps, cfg.optim.student_lr, aug)?;
                (r.network, r.train_miou, r.history)
            }
        };
        let eval_miou = if eval.is_empty() { train_miou } else { evaluate(&net, eval)?.miou };
        let identity_residual = history.iter().map(|b| (b.total - b.recompute_total()).abs()).fold(0.0, f64::max);
        Ok(CellResult { row, seed, train_miou, eval_miou, final_loss: history.last().cloned(), identity_residual, history })
    };

    let threads = match cfg.optim.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(jobs.len())
    .max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let out = run(jobs[i]);
                if let Ok(c) = &out {
                    log::info!("cell {} eval mIoU {:.4}", c.id(), c.eval_miou);
                }
                slots.lock().expect("no worker panicked while holding the lock")[i] = Some(out);
            });
        }
    });
    let cells: Vec<CellResult> = slots
        .into_inner()
        .map_err(|_| Error::Divergence("a grid worker panicked".into()))?
        .into_iter()
        .map(|s| s.expect("every job ran"))
        .collect::<Result<_>>()?;

    let per_seed = |row: Option<AblationRow>| -> Vec<f64> {
        seeds
            .iter()
            .map(|&s| cells.iter().find(|c| c.row == row && c.seed == s).map(|c| c.eval_miou).expect("cell exists"))
            .collect()
    };
    let baseline = per_seed(Some(AblationRow::KldSeg));
    let rows = AblationRow::ALL
        .iter()
        .map(|&row| {
            let v = per_seed(Some(row));
            let deltas: Vec<f64> = v.iter().zip(&baseline).map(|(a, b)| a - b).collect();
            RowSummary { row, median_miou: median(&v), median_delta: median(&deltas), per_seed: v }
        })
        .collect();
    let no_kd = per_seed(None);
    let teacher_eval_miou = if eval.is_empty() { teacher_train_miou } else { evaluate(teacher, eval)?.miou };
    Ok(AblationReport {
        seeds,
        teacher_train_miou,
        teacher_eval_miou,
        no_kd_median: median(&no_kd),
        no_kd,
        rows,
        cells,
    })
}
