//! Metrics rows, the CSV layout, and the end-of-run summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::aggregation::LayerKey;
use crate::error::Result;

use super::ExperimentConfig;

/// Everything logged for one evaluated round. Optional entries render as
/// empty CSV cells: similarity needs at least two clients with features,
/// alignment rates need at least one recorded projection, and the step
/// size bound needs gradient statistics from a completed round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub method: String,
    pub seed: u64,
    pub mean_acc: f64,
    pub max_acc: f64,
    pub min_acc: f64,
    pub group_acc: Vec<f64>,
    pub stage_cka: Vec<Option<f64>>,
    pub beta_rates: Vec<Option<f64>>,
    pub eta_bound: Option<f64>,
}

/// Column layout for a run's metrics file, fixed by the experiment shape:
/// one accuracy column per group, one similarity column per stage, one
/// alignment-rate column per deep layer of the largest architecture.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    group_ids: Vec<usize>,
    stages: usize,
    deep_keys: Vec<LayerKey>,
}

impl CsvSchema {
    pub fn from_config(cfg: &ExperimentConfig) -> CsvSchema {
        let largest = cfg.groups.last().expect("validated nonempty groups");
        let mut deep_keys = Vec::new();
        for (stage, &depth) in largest.depth_per_stage.iter().enumerate() {
            for index in 1..depth {
                deep_keys.push(LayerKey::new(stage, index));
            }
        }
        CsvSchema {
            group_ids: cfg.groups.iter().map(|g| g.group_id).collect(),
            stages: cfg.model.stages,
            deep_keys,
        }
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Deep layers of the largest architecture, in column order.
    pub fn deep_keys(&self) -> &[LayerKey] {
        &self.deep_keys
    }

    pub fn header(&self) -> String {
        let mut cols = vec![
            "round".to_string(),
            "method".to_string(),
            "seed".to_string(),
            "mean_acc".to_string(),
            "max_acc".to_string(),
            "min_acc".to_string(),
        ];
        for id in &self.group_ids {
            cols.push(format!("acc_group_{id}"));
        }
        for stage in 0..self.stages {
            cols.push(format!("cka_stage_{stage}"));
        }
        for key in &self.deep_keys {
            cols.push(format!(
                "beta_pos_rate_layer_{}_{}",
                key.stage, key.index_in_stage
            ));
        }
        cols.push("eta_bound_estimate".to_string());
        cols.join(",")
    }

    pub fn row(&self, record: &RoundRecord) -> String {
        let mut cols = vec![
            record.round.to_string(),
            record.method.clone(),
            record.seed.to_string(),
            format_float(record.mean_acc),
            format_float(record.max_acc),
            format_float(record.min_acc),
        ];
        debug_assert_eq!(record.group_acc.len(), self.group_ids.len());
        debug_assert_eq!(record.stage_cka.len(), self.stages);
        debug_assert_eq!(record.beta_rates.len(), self.deep_keys.len());
        cols.extend(record.group_acc.iter().copied().map(format_float));
        cols.extend(record.stage_cka.iter().map(format_optional));
        cols.extend(record.beta_rates.iter().map(format_optional));
        cols.push(format_optional(&record.eta_bound));
        cols.join(",")
    }

    pub fn render(&self, records: &[RoundRecord]) -> String {
        let mut out = self.header();
        out.push('\n');
        for record in records {
            out.push_str(&self.row(record));
            out.push('\n');
        }
        out
    }
}

/// Nine significant digits, scientific notation, locale independent.
pub fn format_float(value: f64) -> String {
    format!("{value:.8e}")
}

fn format_optional(value: &Option<f64>) -> String {
    value.map(format_float).unwrap_or_default()
}

/// Paths of the files a run produced, when an output directory was given.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Artifacts {
    pub metrics_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
}

/// End-of-run report: the configuration as executed, the last evaluated
/// round, timing, and where the artifacts went. The full per-round table
/// stays in memory for callers and in the CSV on disk.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub rounds_completed: usize,
    pub final_round: RoundRecord,
    pub wall_clock_secs: f64,
    pub artifacts: Artifacts,
    #[serde(skip)]
    pub records: Vec<RoundRecord>,
}

impl RunSummary {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text)?;
        Ok(())
    }
}
