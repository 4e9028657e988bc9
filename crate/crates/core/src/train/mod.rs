//! Losses, the annealed joint objective and the training loop.

pub mod data;
pub mod loss;
pub mod trainer;

pub use data::PreparedData;
pub use loss::{
    contrastive_loss, contrastive_tape, contrastive_with_grad, huber_loss, joint_loss, prediction_loss,
    squared_error_loss, task_loss_tape, LossParts,
};
pub use trainer::{
    batch_objective, evaluate_store, historical_average_metrics, BatchOutput, EpochRecord, EpochStats, EvalOptions,
    Evaluation, FitSummary, Trainer,
};
