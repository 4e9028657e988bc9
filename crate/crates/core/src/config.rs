//! Model, generator, loss and schedule configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the heads of the last GAT layer are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    #[default]
    Concat,
    Mean,
}

/// Which input step supplies the time-of-day / day-of-week index to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionStep {
    First,
    #[default]
    Last,
}

/// Encoder, decoder and generator widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input embedding width `d`.
    pub d: usize,
    /// Spatial GAT width.
    pub d_s: usize,
    /// Temporal GAT width.
    pub d_t: usize,
    /// Latent width of the meta networks.
    pub d_z: usize,
    /// Positional embedding width.
    pub pos_dim: usize,
    pub k_spatial: usize,
    pub k_temporal: usize,
    pub n_gat_layers: usize,
    pub gin_eps1: f64,
    pub gin_eps2: f64,
    pub final_merge: HeadMerge,
    pub leaky_slope: f64,
    /// Output width of the shared feature transform applied before fusion.
    pub decoder_dim: usize,
    /// Hidden width of the fusion MLP.
    pub decoder_hidden: usize,
    pub proj_dim: usize,
    pub dropout: f64,
    pub position_step: PositionStep,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_s: 64,
            d_t: 128,
            d_z: 16,
            pos_dim: 32,
            k_spatial: 4,
            k_temporal: 1,
            n_gat_layers: 2,
            gin_eps1: 0.0,
            gin_eps2: 0.0,
            final_merge: HeadMerge::Concat,
            leaky_slope: 0.2,
            decoder_dim: 128,
            decoder_hidden: 256,
            proj_dim: 64,
            dropout: 0.0,
            position_step: PositionStep::Last,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("d_s", self.d_s),
            ("d_t", self.d_t),
            ("d_z", self.d_z),
            ("pos_dim", self.pos_dim),
            ("k_spatial", self.k_spatial),
            ("k_temporal", self.k_temporal),
            ("n_gat_layers", self.n_gat_layers),
            ("decoder_dim", self.decoder_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("proj_dim", self.proj_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("model.{name} must be at least 1")));
        }
        if self.d_s % self.k_spatial != 0 {
            return Err(Error::Invalid(format!(
                "d_s ({}) must be divisible by k_spatial ({})",
                self.d_s, self.k_spatial
            )));
        }
        if self.d_t % self.k_temporal != 0 {
            return Err(Error::Invalid(format!(
                "d_t ({}) must be divisible by k_temporal ({})",
                self.d_t, self.k_temporal
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Meta view generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Hidden width inside every GIN / edge MLP.
    pub gin_hidden: usize,
    /// GIN embedding width `d1`.
    pub d1: usize,
    /// Hidden widths of the feature encoder producing the conditional latent.
    pub phi_hidden: Vec<usize>,
    /// Hidden widths of each parameter-generating MLP.
    pub psi_hidden: Vec<usize>,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    /// Optional per-epoch geometric decay factor for `tau`.
    pub tau_decay: Option<f64>,
    pub tau_min: f64,
    /// Apply discrete (straight-through) views; soft views otherwise.
    pub hard: bool,
    /// Generate the edge MLP from the same latent as the second GIN MLP.
    pub share_edge_latent: bool,
    /// Initial log-variance of the learnable prior latents.
    pub init_log_var: f64,
    /// Scale of the hypernetwork weight initialisation relative to fan-in scaling.
    pub psi_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            gin_hidden: 32,
            d1: 16,
            phi_hidden: vec![64],
            psi_hidden: Vec::new(),
            tau: 1.0,
            tau_decay: None,
            tau_min: 0.1,
            hard: true,
            share_edge_latent: true,
            init_log_var: (0.5f64).ln(),
            psi_gain: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gin_hidden == 0 || self.d1 == 0 {
            return Err(Error::Invalid("generator widths must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Invalid(format!("gumbel temperature must be positive, got {}", self.tau)));
        }
        if let Some(r) = self.tau_decay {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Invalid("tau_decay must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Temperature in effect at `epoch`.
    pub fn tau_at(&self, epoch: usize) -> f64 {
        match self.tau_decay {
            Some(r) => (self.tau * r.powi(epoch as i32)).max(self.tau_min.min(self.tau)),
            None => self.tau,
        }
    }
}

/// Forecasting task, selecting the prediction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Traffic,
    Crime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub task: Task,
    /// Huber threshold.
    pub delta: f64,
    /// Contrastive temperature.
    pub tau_cl: f64,
    /// Keep the positive pair in the contrastive denominator.
    pub include_positive_in_denominator: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            task: Task::Traffic,
            delta: 1.0,
            tau_cl: 0.5,
            include_positive_in_denominator: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.tau_cl > 0.0) {
            return Err(Error::Invalid("delta and tau_cl must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    #[default]
    Linear,
    Cosine,
}

/// Ramp of the three auxiliary loss weights from 0 to their maxima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    pub lambda_max: [f64; 3],
    /// Epochs to reach `lambda_max`; `None` means a quarter of the training run.
    pub ramp_epochs: Option<usize>,
    pub shape: RampShape,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            lambda_max: [1.0, 1.0, 1.0],
            ramp_epochs: None,
            shape: RampShape::Linear,
        }
    }
}

impl AnnealSchedule {
    pub fn ramp_for(&self, max_epochs: usize) -> usize {
        self.ramp_epochs
            .unwrap_or_else(|| (max_epochs as f64 * 0.25).round() as usize)
            .max(1)
    }

    /// `(lambda_1, lambda_2, lambda_3)` at `epoch` (0-based).
    pub fn lambdas(&self, epoch: usize, max_epochs: usize) -> [f64; 3] {
        let ramp = self.ramp_for(max_epochs) as f64;
        let p = (epoch as f64 / ramp).min(1.0);
        let frac = match self.shape {
            RampShape::Linear => p,
            RampShape::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * p).cos()),
        };
        self.lambda_max.map(|m| m * frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub decay_ratio: f64,
    pub decay_epochs: Vec<usize>,
    pub max_epochs: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    /// Early stopping patience in epochs, on validation MAE.
    pub patience: usize,
    /// Cap on optimiser steps per epoch; every training window is used when unset.
    pub max_batches_per_epoch: Option<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            decay_ratio: 0.5,
            decay_epochs: vec![1, 50, 100],
            max_epochs: 100,
            seed: 0,
            grad_clip: None,
            patience: 15,
            max_batches_per_epoch: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, contrastive: bool) -> Result<()> {
        if contrastive && self.batch_size < 2 {
            return Err(Error::Invalid(
                "contrastive training needs batch_size >= 2".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || !(self.lr > 0.0) {
            return Err(Error::Invalid("batch_size, max_epochs and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate at `epoch`: `lr * ratio^(number of decay epochs <= epoch)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = config.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    config.lr * config.decay_ratio.powi(steps as i32)
}

/// Ablation variants of the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    WoNodeMeta,
    WoEdgeMeta,
    WoMeta,
    WoGcl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::WoNodeMeta,
        Variant::WoEdgeMeta,
        Variant::WoMeta,
        Variant::WoGcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoNodeMeta => "wo_node_meta",
            Variant::WoEdgeMeta => "wo_edge_meta",
            Variant::WoMeta => "wo_meta",
            Variant::WoGcl => "wo_gcl",
        }
    }

    /// Whether the node-view MLPs are produced by meta networks.
    pub fn node_meta(self) -> bool {
        matches!(self, Variant::Full | Variant::WoEdgeMeta)
    }

    /// Whether the edge-view MLP is produced by meta networks.
    pub fn edge_meta(self) -> bool {
        matches!(self, Variant::Full | Variant::WoNodeMeta)
    }

    /// Whether the augmented branch and contrastive term are active.
    pub fn contrastive(self) -> bool {
        !matches!(self, Variant::WoGcl)
    }

    /// Human-readable configuration delta.
    pub fn description(self) -> &'static str {
        match self {
            Variant::Full => "meta-generated node and edge view parameters, two-branch contrastive training",
            Variant::WoNodeMeta => "node-view GIN parameters learned directly instead of meta-generated",
            Variant::WoEdgeMeta => "edge-view MLP parameters learned directly instead of meta-generated",
            Variant::WoMeta => "all view-generator parameters learned directly; no meta networks or KL terms",
            Variant::WoGcl => "single original branch; no view generators, lambda_1 = 0",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown variant '{s}' (expected one of full, wo_node_meta, wo_edge_meta, wo_meta, wo_gcl)"
                ))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_relative_eq!(lr_at(0, &c), 1e-3);
        assert_relative_eq!(lr_at(1, &c), 5e-4);
        assert_relative_eq!(lr_at(120, &c), 1.25e-4);
    }

    #[test]
    fn anneal_is_monotone_and_bounded() {
        for shape in [RampShape::Linear, RampShape::Cosine] {
            let s = AnnealSchedule {
                lambda_max: [1.0, 0.5, 2.0],
                ramp_epochs: Some(7),
                shape,
            };
            assert_eq!(s.lambdas(0, 20), [0.0, 0.0, 0.0]);
            let mut prev = [0.0; 3];
            for e in 0..30 {
                let l = s.lambdas(e, 20);
                for k in 0..3 {
                    assert!(l[k] >= prev[k] && l[k] <= s.lambda_max[k] + 1e-15);
                }
                prev = l;
            }
            assert_eq!(s.lambdas(7, 20), s.lambda_max);
        }
    }

    #[test]
    fn default_ramp_is_a_quarter_of_training() {
        assert_eq!(AnnealSchedule::default().ramp_for(100), 25);
    }

    #[test]
    fn head_divisibility_is_enforced() {
        let c = ModelConfig {
            d_s: 30,
            k_spatial: 4,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("wo_everything".parse::<Variant>().is_err());
    }
}
