//! The spatio-temporal encoder-decoder with its two branches.

pub mod checkpoint;
pub mod encoder;
pub mod gat;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{AttentionPass, AttentionTrace, Decoder, PassAxis, PositionalEmbeddings, ProjectionHead};
pub use gat::{gat_forward, gat_layer, GatLayer, GatOutput, GatVars};

use crate::config::{GeneratorConfig, ModelConfig, PositionStep, Variant};
use crate::error::{shape_err, Error, Result};
use crate::generator::{
    apply_views_tape, support_matrix, GeneratorNoise, LatentMode, MetaGenerator, NodeAction, ViewVars,
};
use crate::graph::{GraphStructure, SpatialGraph, StgSample, TemporalGraph};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Sizes and hyperparameters that fix the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub nodes: usize,
    /// Input window length `T`.
    pub steps: usize,
    /// Forecast horizon `T'`.
    pub horizon: usize,
    pub f_in: usize,
    pub f_out: usize,
    pub model: ModelConfig,
    pub generator: GeneratorConfig,
    pub variant: Variant,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.generator.validate()?;
        if self.nodes == 0 || self.steps == 0 || self.horizon == 0 || self.f_in == 0 || self.f_out == 0 {
            return Err(Error::Invalid("model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Graph constants shared by every sample.
#[derive(Debug, Clone)]
pub struct GraphContext<S> {
    pub spatial_edges: Vec<(usize, usize)>,
    pub spatial_neighbors: Array2<S>,
    pub spatial_support: Array2<S>,
    pub temporal_edges: Vec<(usize, usize)>,
    pub temporal_neighbors: Array2<S>,
    pub temporal_support: Array2<S>,
}

impl<S: Scalar> GraphContext<S> {
    pub fn new(spatial: &SpatialGraph, temporal: &TemporalGraph) -> Self {
        Self {
            spatial_edges: spatial.edges().to_vec(),
            spatial_neighbors: spatial.neighbor_matrix(),
            spatial_support: support_matrix(spatial),
            temporal_edges: temporal.edges().to_vec(),
            temporal_neighbors: temporal.neighbor_matrix(),
            temporal_support: support_matrix(temporal),
        }
    }

    pub fn nodes(&self) -> usize {
        self.spatial_support.nrows()
    }

    pub fn steps(&self) -> usize {
        self.temporal_support.nrows()
    }
}

/// Tape handles of one encoded and decoded branch.
#[derive(Debug, Clone)]
pub struct BranchOut {
    /// Embedded input `X0`, `(T * N) x d`.
    pub x0: Var,
    /// Final representation `H`, `(T * N) x d`.
    pub h: Var,
    /// Prediction, `(T' * N) x F'`.
    pub y_hat: Var,
    /// Projection, `1 x proj_dim`.
    pub z: Var,
    pub spatial_attention: AttentionTrace,
    pub temporal_attention: AttentionTrace,
}

/// How the augmented branch applies its views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugMode {
    /// Gumbel-Softmax views at temperature `tau`; `hard` uses straight-through one-hots.
    Sampled { tau: f64, hard: bool },
    /// Views are still generated (and KL computed), but every node and edge is kept.
    KeepAll,
}

/// Tape handles of the augmented input.
#[derive(Debug, Clone)]
pub struct AugOut {
    pub x: Var,
    pub spatial_support: Var,
    pub temporal_support: Var,
    pub spatial_views: ViewVars,
    pub temporal_views: ViewVars,
    pub kl_spatial: Option<Var>,
    pub kl_temporal: Option<Var>,
}

/// Randomness consumed by one training sample.
#[derive(Debug, Clone)]
pub struct SampleNoise<S> {
    pub spatial: Option<GeneratorNoise<S>>,
    pub temporal: Option<GeneratorNoise<S>>,
    pub dropout_original: Option<Array2<S>>,
    pub dropout_augmented: Option<Array2<S>>,
}

impl<S> SampleNoise<S> {
    pub fn none() -> Self {
        Self {
            spatial: None,
            temporal: None,
            dropout_original: None,
            dropout_augmented: None,
        }
    }
}

/// Parameter layout of the full model. Values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cl4st {
    pub spec: ModelSpec,
    pub embed: Linear,
    pub spatial: AttentionPass,
    pub temporal: AttentionPass,
    pub decoder: Decoder,
    pub projection: ProjectionHead,
    pub spatial_generator: Option<MetaGenerator>,
    pub temporal_generator: Option<MetaGenerator>,
}

impl Cl4st {
    /// Register all parameters in `store` (which should be empty) and return the layout.
    pub fn new<S: Scalar, R: Rng>(spec: ModelSpec, store: &mut ParamStore<S>, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let c = &spec.model;
        let (t, n) = (spec.steps, spec.nodes);
        let embed = Linear::new(store, rng, "embed", spec.f_in, c.d);
        let spatial = AttentionPass::new(
            store,
            rng,
            "spatial",
            PassAxis::Spatial,
            t * c.d,
            c.d_s,
            c.k_spatial,
            c.n_gat_layers,
            c.final_merge,
        )?;
        let temporal = AttentionPass::new(
            store,
            rng,
            "temporal",
            PassAxis::Temporal,
            n * c.d,
            c.d_t,
            c.k_temporal,
            c.n_gat_layers,
            c.final_merge,
        )?;
        let decoder = Decoder::new(
            store,
            rng,
            t,
            n,
            c.d,
            c.pos_dim,
            c.decoder_dim,
            c.decoder_hidden,
            spec.horizon,
            spec.f_out,
        );
        let projection = ProjectionHead::new(store, rng, c.d, c.proj_dim);
        let (spatial_generator, temporal_generator) = if spec.variant.contrastive() {
            let eps = (c.gin_eps1, c.gin_eps2);
            let (nm, em) = (spec.variant.node_meta(), spec.variant.edge_meta());
            let gen_s = MetaGenerator::new(store, rng, "gen_s", n, t * spec.f_in, c.d_z, &spec.generator, eps, nm, em)?;
            let gen_t = MetaGenerator::new(store, rng, "gen_t", t, n * spec.f_in, c.d_z, &spec.generator, eps, nm, em)?;
            (Some(gen_s), Some(gen_t))
        } else {
            (None, None)
        };
        Ok(Self {
            spec,
            embed,
            spatial,
            temporal,
            decoder,
            projection,
            spatial_generator,
            temporal_generator,
        })
    }

    pub fn has_augmented_branch(&self) -> bool {
        self.spatial_generator.is_some()
    }

    pub fn check_sample<S: Scalar>(&self, sample: &StgSample<S>) -> Result<()> {
        sample.validate()?;
        let s = &self.spec;
        if sample.x.shape() != (s.steps, s.nodes, s.f_in) {
            return Err(shape_err(
                "model input",
                format!("({}, {}, {})", s.steps, s.nodes, s.f_in),
                format!("{:?}", sample.x.shape()),
            ));
        }
        Ok(())
    }

    /// `(tod, dow)` slot that feeds the decoder.
    pub fn position_of<S: Scalar>(&self, sample: &StgSample<S>) -> (usize, usize) {
        let k = match self.spec.model.position_step {
            PositionStep::First => 0,
            PositionStep::Last => sample.tod_index.len() - 1,
        };
        (sample.tod_index[k] as usize, sample.dow_index[k] as usize)
    }

    /// Shared encoder, decoder and projection on an input `x` (`(T * N) x F`).
    #[allow(clippy::too_many_arguments)]
    pub fn branch<S: Scalar>(
        &self,
        t: &Tape<S>,
        store: &ParamStore<S>,
        x: Var,
        spatial_support: Var,
        temporal_support: Var,
        position: (usize, usize),
        dropout: Option<&Array2<S>>,
    ) -> BranchOut {
        let (steps, nodes) = (self.spec.steps, self.spec.nodes);
        let slope = S::of(self.spec.model.leaky_slope);
        let x0 = self.embed.forward(t, store, x);
        let (hs, spatial_attention) = self.spatial.forward(t, store, x0, spatial_support, steps, nodes, slope);
        let (h, temporal_attention) = self.temporal.forward(t, store, hs, temporal_support, steps, nodes, slope);
        let y_hat = self.decoder.forward(
            t,
            store,
            h,
            x0,
            steps,
            nodes,
            position.0,
            position.1,
            self.spec.horizon,
            dropout,
        );
        let z = self.projection.forward(t, store, h);
        BranchOut {
            x0,
            h,
            y_hat,
            z,
            spatial_attention,
            temporal_attention,
        }
    }

    /// The original branch on unmodified graphs.
    pub fn original_branch<S: Scalar>(
        &self,
        t: &Tape<S>,
        store: &ParamStore<S>,
        ctx: &GraphContext<S>,
        x: Var,
        position: (usize, usize),
        dropout: Option<&Array2<S>>,
    ) -> BranchOut {
        let ss = t.leaf(ctx.spatial_support.clone());
        let ts = t.leaf(ctx.temporal_support.clone());
        self.branch(t, store, x, ss, ts, position, dropout)
    }

    /// Generate spatial and temporal views from `x` and apply them.
    ///
    /// Both generators read the original signal. Node views are applied
    /// spatially first, then per time step. `None` without an augmented branch.
    pub fn augment<S: Scalar>(
        &self,
        t: &Tape<S>,
        store: &ParamStore<S>,
        ctx: &GraphContext<S>,
        x: Var,
        noise: &SampleNoise<S>,
        mode: AugMode,
    ) -> Option<AugOut> {
        let gen_s = self.spatial_generator.as_ref()?;
        let gen_t = self.temporal_generator.as_ref()?;
        let (ns, nt) = (noise.spatial.as_ref()?, noise.temporal.as_ref()?);
        let (steps, nodes, f) = (self.spec.steps, self.spec.nodes, self.spec.f_in);
        let (tau, hard) = match mode {
            AugMode::Sampled { tau, hard } => (tau, hard),
            AugMode::KeepAll => (1.0, false),
        };

        let units_s = t.reshape(t.swap_outer(x, steps, nodes), nodes, steps * f);
        let units_t = t.reshape(x, steps, nodes * f);
        let nb_s = t.leaf(ctx.spatial_neighbors.clone());
        let nb_t = t.leaf(ctx.temporal_neighbors.clone());
        let (sv, gs) = gen_s.views_tape(t, store, units_s, nb_s, &ctx.spatial_edges, ns, tau, hard);
        let (tv, gt) = gen_t.views_tape(t, store, units_t, nb_t, &ctx.temporal_edges, nt, tau, hard);

        let weights = |v: &ViewVars, units: usize, edges: usize| match mode {
            AugMode::Sampled { .. } => (v.node_applied, v.edge_applied),
            AugMode::KeepAll => {
                let mut node = Array2::zeros((units, NodeAction::COUNT));
                node.column_mut(NodeAction::Keep as usize).fill(S::one());
                let mut edge = Array2::zeros((edges, 2));
                edge.column_mut(1).fill(S::one());
                (t.leaf(node), (edges > 0).then(|| t.leaf(edge)))
            }
        };
        let (nw_s, ew_s) = weights(&sv, nodes, ctx.spatial_edges.len());
        let (nw_t, ew_t) = weights(&tv, steps, ctx.temporal_edges.len());

        let (aug_s, spatial_support) = apply_views_tape(t, units_s, nw_s, ew_s, &ctx.spatial_edges);
        let x_s = t.swap_outer(t.reshape(aug_s, nodes * steps, f), nodes, steps);
        let (aug_t, temporal_support) =
            apply_views_tape(t, t.reshape(x_s, steps, nodes * f), nw_t, ew_t, &ctx.temporal_edges);
        let x_aug = t.reshape(aug_t, steps * nodes, f);
        Some(AugOut {
            x: x_aug,
            spatial_support,
            temporal_support,
            spatial_views: sv,
            temporal_views: tv,
            kl_spatial: MetaGenerator::kl_total(t, &gs),
            kl_temporal: MetaGenerator::kl_total(t, &gt),
        })
    }

    /// Draw the generator and dropout noise for one sample.
    pub fn sample_noise<S: Scalar, R: Rng + ?Sized>(
        &self,
        ctx: &GraphContext<S>,
        rng: &mut R,
        latent: LatentMode,
        training: bool,
    ) -> SampleNoise<S> {
        let spatial = self
            .spatial_generator
            .as_ref()
            .map(|g| g.sample_noise(rng, ctx.spatial_edges.len(), latent));
        let temporal = self
            .temporal_generator
            .as_ref()
            .map(|g| g.sample_noise(rng, ctx.temporal_edges.len(), latent));
        let p = self.spec.model.dropout;
        let c = &self.spec.model;
        let width = 2 * c.decoder_dim + 3 * c.pos_dim;
        let mask = |rng: &mut R| {
            (training && p > 0.0).then(|| {
                Array2::from_shape_fn((self.spec.nodes, width), |_| {
                    if rng.random::<f64>() < p {
                        S::zero()
                    } else {
                        S::of(1.0 / (1.0 - p))
                    }
                })
            })
        };
        let dropout_original = mask(rng);
        let dropout_augmented = if spatial.is_some() { mask(rng) } else { None };
        SampleNoise {
            spatial,
            temporal,
            dropout_original,
            dropout_augmented,
        }
    }

    /// Input matrix `(T * N) x F` of a sample.
    pub fn input_matrix<S: Scalar>(sample: &StgSample<S>) -> Array2<S> {
        sample.x.to_matrix()
    }

    /// Original-branch prediction `(T' * N) x F'` in the model's (normalised) units.
    pub fn predict<S: Scalar>(&self, store: &ParamStore<S>, ctx: &GraphContext<S>, sample: &StgSample<S>) -> Result<Array2<S>> {
        self.check_sample(sample)?;
        let t = Tape::new();
        let x = t.leaf(Self::input_matrix(sample));
        let out = self.original_branch(&t, store, ctx, x, self.position_of(sample), None);
        let y = t.value(out.y_hat).clone();
        Ok(y)
    }

    /// Names of all generator parameters in `store`.
    pub fn generator_parameter_names<S: Scalar>(store: &ParamStore<S>) -> Vec<String> {
        store.names().filter(|n| n.starts_with("gen_")).map(str::to_string).collect()
    }
}

/// Views generated for one sample, as plain values (for export and inspection).
#[derive(Debug, Clone)]
pub struct SampleViews<S> {
    pub spatial_node: Array2<S>,
    pub spatial_edge: Option<Array2<S>>,
    pub temporal_node: Array2<S>,
    pub temporal_edge: Option<Array2<S>>,
}

impl Cl4st {
    /// Sample hard views for one input without building a training graph.
    pub fn sample_views<S: Scalar, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<S>,
        ctx: &GraphContext<S>,
        sample: &StgSample<S>,
        rng: &mut R,
        tau: f64,
    ) -> Result<SampleViews<S>> {
        self.check_sample(sample)?;
        if !self.has_augmented_branch() {
            return Err(Error::Invalid("model has no view generators".into()));
        }
        let noise = self.sample_noise(ctx, rng, LatentMode::Sample, false);
        let t = Tape::new();
        let x = t.leaf(Self::input_matrix(sample));
        let aug = self
            .augment(&t, store, ctx, x, &noise, AugMode::Sampled { tau, hard: true })
            .expect("generators present");
        let val = |v: Var| t.value(v).clone();
        Ok(SampleViews {
            spatial_node: val(aug.spatial_views.node_applied),
            spatial_edge: aug.spatial_views.edge_applied.map(val),
            temporal_node: val(aug.temporal_views.node_applied),
            temporal_edge: aug.temporal_views.edge_applied.map(val),
        })
    }
}

#[cfg(test)]
mod tests;
