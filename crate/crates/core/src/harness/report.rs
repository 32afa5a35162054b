//! Line-delimited JSON records plus a final summary document.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ablation::AblationReport;
use super::config::RunConfig;
use super::train::EvalReport;
use crate::diagmetrics::BoundSummary;
use crate::kd::LossBreakdown;
use crate::Result;

pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Appends one JSON object per line; every record carries a `kind`.
pub struct Reporter {
    out: Option<BufWriter<File>>,
    dir: Option<PathBuf>,
}

impl Reporter {
    /// Writes into `dir/report.jsonl`, creating the directory.
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let file = File::create(dir.join(REPORT_FILE))?;
        Ok(Self { out: Some(BufWriter::new(file)), dir: Some(dir.to_path_buf()) })
    }

    /// Discards every record.
    pub fn sink() -> Self {
        Self { out: None, dir: None }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn record(&mut self, kind: &str, body: Value) -> Result<()> {
        if let Some(out) = &mut self.out {
            let mut obj = json!({ "kind": kind });
            if let (Value::Object(target), Value::Object(extra)) = (&mut obj, body) {
                target.extend(extra);
            }
            serde_json::to_writer(&mut *out, &obj).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn steps(&mut self, cell: &str, history: &[LossBreakdown]) -> Result<()> {
        for (step, b) in history.iter().enumerate() {
            self.record("step", json!({ "cell": cell, "step": step, "loss": b }))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(out) = &mut self.out {
            out.flush()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub param_count: usize,
    pub train_miou: f64,
    pub eval: Option<EvalReport>,
    pub final_loss: Option<f64>,
}

/// Self-describing run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: RunConfig,
    pub models: Vec<ModelSummary>,
    pub ablation: Option<AblationReport>,
    pub bound: Option<BoundSummary>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            models: Vec::new(),
            ablation: None,
            bound: None,
            timings: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::from)?;
        std::fs::write(dir.join(SUMMARY_FILE), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(SUMMARY_FILE))?;
        serde_json::from_str(&text).map_err(|e| crate::Error::Format(format!("summary: {e}")))
    }

    /// Plain-text overview.
    pub fn render(&self) -> String {
        let mut s = format!("topokd {} run\n", self.version);
        for m in &self.models {
            s += &format!(
                "  {:<10} params {:>7}  train mIoU {:.4}  eval mIoU {}\n",
                m.name,
                m.param_count,
                m.train_miou,
                m.eval.as_ref().map_or("-".into(), |e| format!("{:.4}", e.miou))
            );
        }
        if let Some(a) = &self.ablation {
            s += &a.table();
        }
        if let Some(b) = &self.bound {
            s += &format!("  bound check: {}/{} passed ({:.2}%)\n", b.passed, b.checked, 100.0 * b.pass_rate());
        }
        for (phase, secs) in &self.timings {
            s += &format!("  time {phase}: {secs:.1}s\n");
        }
        s
    }
}
