//! Experiment configuration file (JSON).

use std::path::{Path, PathBuf};

use anyhow::Context;
use cl4st_core::config::{AnnealSchedule, GeneratorConfig, LossConfig, ModelConfig, Task, TrainConfig, Variant};
use cl4st_core::data::{DatasetKind, DatasetSpec, SplitRule};
use cl4st_core::graph::DEFAULT_KAPPA;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "CL4ST_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Dataset directory; relative paths resolve against the config file.
    pub path: PathBuf,
    #[serde(default)]
    pub t_in: Option<usize>,
    #[serde(default)]
    pub t_out: Option<usize>,
    #[serde(default)]
    pub split: Option<SplitRule>,
    #[serde(default)]
    pub interval_minutes: Option<u32>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
}

impl DatasetSection {
    pub fn spec(&self) -> DatasetSpec {
        let (t_in, t_out) = self.kind.default_horizons();
        DatasetSpec {
            kind: self.kind,
            path: self.path.clone(),
            interval_minutes: self.interval_minutes,
            t_in: self.t_in.unwrap_or(t_in),
            t_out: self.t_out.unwrap_or(t_out),
            split: self.split.clone().unwrap_or_else(|| SplitRule::default_for(self.kind)),
            sigma: self.sigma,
            kappa: self.kappa.unwrap_or(DEFAULT_KAPPA),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub anneal: AnnealSchedule,
    #[serde(default)]
    pub train: TrainConfig,
    /// Output directory; relative paths resolve against the config file.
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Read, resolve relative paths, apply `CL4ST_SEED` and validate.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(CliError::usage)?;
        let mut cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(CliError::usage)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.path = resolve(base, &cfg.dataset.path);
        cfg.out_dir = resolve(base, &cfg.out_dir);
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), CliError> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer"))
                .map_err(CliError::usage)?;
        }
        Ok(())
    }

    /// Tie the loss to the dataset kind and check every section.
    pub fn finish(&mut self) -> Result<(), CliError> {
        self.loss.task = match self.dataset.kind {
            DatasetKind::TrafficGraph => Task::Traffic,
            DatasetKind::CrimeGrid => Task::Crime,
        };
        let check = || -> cl4st_core::Result<()> {
            self.model.validate()?;
            self.generator.validate()?;
            self.loss.validate()?;
            self.train.validate(self.variant.contrastive())
        };
        check().context("invalid config").map_err(CliError::usage)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
