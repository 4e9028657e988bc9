//! Spatio-temporal graph forecasting with learnable, input-conditioned
//! contrastive augmentations.
//!
//! The crate is generic over the floating point type through [`Scalar`];
//! `f64` aliases are provided for the common case.

pub mod config;
pub mod data;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use config::{
    lr_at, AnnealSchedule, GeneratorConfig, HeadMerge, LossConfig, ModelConfig, PositionStep,
    RampShape, Task, TrainConfig, Variant,
};
pub use error::{Error, Result};
pub use graph::{
    build_grid_graph, build_sensor_graph, build_temporal_graph, FeatureTensor, GraphStructure,
    Neighborhood, SpatialGraph, StgSample, TemporalGraph,
};
pub use model::{
    load_checkpoint, save_checkpoint, AugMode, Checkpoint, Cl4st, GraphContext, ModelSpec, SampleNoise,
};
pub use metrics::{compute_metrics, ErrorStats, MetricsAccumulator, MetricsReport};
pub use params::{Adam, GradBuffer, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Grads, Tape, Var};
pub use train::{
    batch_objective, contrastive_loss, huber_loss, joint_loss, prediction_loss, squared_error_loss, EpochRecord,
    Evaluation, LossParts, PreparedData, Trainer,
};

pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type FeatureTensor64 = FeatureTensor<f64>;
pub type ParamStore64 = ParamStore<f64>;
pub type Trainer64 = Trainer<f64>;
pub type Trainer32 = Trainer<f32>;
pub type PreparedData64 = PreparedData<f64>;
