//! Learnable augmentation: GIN-based node and edge view sampling with
//! Gumbel-Softmax, and hypernetworks that generate the view weights.

pub mod gin;
pub mod gumbel;
pub mod kl;
pub mod meta;
pub mod view;

pub use gin::{gin_layer, gin_layer_tape};
pub use gumbel::{gumbel_softmax, gumbel_softmax_tape, gumbel_softmax_with_noise, GumbelSample};
pub use kl::{kl_loss, kl_tape, KlInput, LatentGaussian};
pub use meta::{GeneratedVars, GeneratorNoise, LatentMode, LatentNoise, MetaGenerator, ThetaSource};
pub use view::{
    apply_views, apply_views_tape, edge_view, node_view, support_matrix, AugmentationView,
    EdgeAction, EdgeView, EdgeViewParams, GinParams, NodeAction, NodeView, ViewNoise, ViewVars,
};
