//! `report.json`: the result document written by train, evaluate and ablate.

use std::path::Path;

use cl4st_core::config::Variant;
use cl4st_core::data::{DatasetKind, SplitPart};
use cl4st_core::metrics::MetricsReport;
use cl4st_core::train::FitSummary;
use serde::{Deserialize, Serialize};

/// JSON Schema every report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub kind: DatasetKind,
    pub path: String,
    pub nodes: usize,
    pub steps: usize,
    pub features: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<[usize; 2]>,
    pub t_in: usize,
    pub t_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub historical_average: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub total: usize,
    pub generator: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub variant: Variant,
    pub variant_description: String,
    pub dataset: DatasetSummary,
    pub split: SplitPart,
    pub windows: usize,
    pub seed: u64,
    pub missing_rate: Option<f64>,
    pub metrics: MetricsReport,
    pub baseline: Baselines,
    pub training: Option<FitSummary>,
    pub parameters: ParamCounts,
}

impl Report {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
