//! Structured run records and their on-disk forms.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::pipeline::StageConfig;

/// Metrics of one trained stage, in execution order inside a run.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: u8,
    pub level: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub param_count: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_top1: Vec<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub examples: usize,
    pub dim: usize,
    pub num_labels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub num_labels: usize,
    pub num_clusters: usize,
}

/// Everything a pipeline run reports: per-stage curves, clusterings,
/// parameter counts, flags, and the config echo.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: StageConfig,
    pub dataset: DatasetSummary,
    pub stages: Vec<StageReport>,
    pub levels: Vec<LevelSummary>,
    pub total_epochs: usize,
    pub final_top1_error: f64,
    pub final_param_count: usize,
    pub flags: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// `metrics.csv` body: epoch, stage, split, loss, top1. Train rows do
    /// not carry a top-1 column value.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,stage,split,loss,top1\n");
        for s in &self.stages {
            for (e, &loss) in s.train_loss.iter().enumerate() {
                let _ = writeln!(out, "{e},{},train,{loss},", s.stage);
            }
            for (e, (&loss, &top1)) in s.val_loss.iter().zip(&s.val_top1).enumerate() {
                let _ = writeln!(out, "{e},{},val,{loss},{top1}", s.stage);
            }
        }
        out
    }

    pub fn save_metrics_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.metrics_csv())?;
        Ok(())
    }
}
