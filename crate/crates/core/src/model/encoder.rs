//! Input embedding, spatial and temporal attention passes, decoder and projection head.
//!
//! Tensors of shape `T x N x c` live on the tape as `(T * N) x c` matrices,
//! row `t * N + n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gat::{gat_forward, GatLayer};
use crate::config::HeadMerge;
use crate::error::Result;
use crate::nn::{Activation, Linear, Mlp, MlpShape};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Which axis a pass attends over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassAxis {
    /// Units are nodes; each carries its `T * d` history.
    Spatial,
    /// Units are time steps; each carries all `N * d` node features.
    Temporal,
}

/// Flatten-project, stacked GAT layers, project back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPass {
    pub axis: PassAxis,
    pub fc_in: Linear,
    pub layers: Vec<GatLayer>,
    pub fc_out: Linear,
}

/// Attention matrices of every layer and head from one pass.
pub type AttentionTrace = Vec<Vec<Var>>;

impl AttentionPass {
    /// `fold` is the flattened unit width (`T * d` or `N * d`).
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        axis: PassAxis,
        fold: usize,
        width: usize,
        heads: usize,
        n_layers: usize,
        final_merge: HeadMerge,
    ) -> Result<Self> {
        let fc_in = Linear::new(store, rng, &format!("{name}.fc_in"), fold, width);
        let layers = (0..n_layers)
            .map(|l| {
                let merge = if l + 1 == n_layers { final_merge } else { HeadMerge::Concat };
                GatLayer::new(store, rng, &format!("{name}.gat{l}"), width, width, heads, merge)
            })
            .collect::<Result<Vec<_>>>()?;
        let fc_out = Linear::new(store, rng, &format!("{name}.fc_out"), width, fold);
        Ok(Self {
            axis,
            fc_in,
            layers,
            fc_out,
        })
    }

    /// `x` is `(T * N) x d`; `support` is the unit-level attention support with self-loops.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Scalar>(
        &self,
        t: &Tape<S>,
        store: &ParamStore<S>,
        x: Var,
        support: Var,
        steps: usize,
        nodes: usize,
        slope: S,
    ) -> (Var, AttentionTrace) {
        let d = t.shape(x).1;
        let units = match self.axis {
            PassAxis::Spatial => t.reshape(t.swap_outer(x, steps, nodes), nodes, steps * d),
            PassAxis::Temporal => t.reshape(x, steps, nodes * d),
        };
        let mut h = self.fc_in.forward(t, store, units);
        let mut trace = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let o = gat_forward(t, h, support, &layer.vars(t, store), slope);
            trace.push(o.alphas);
            h = if l + 1 < self.layers.len() { t.elu(o.out) } else { o.out };
        }
        let back = self.fc_out.forward(t, store, h);
        let out = match self.axis {
            PassAxis::Spatial => t.swap_outer(t.reshape(back, nodes * steps, d), nodes, steps),
            PassAxis::Temporal => t.reshape(back, steps * nodes, d),
        };
        (out, trace)
    }
}

/// Learnable spatial, time-of-day and day-of-week position tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEmbeddings {
    pub spatial: ParamId,
    pub tod: ParamId,
    pub dow: ParamId,
}

impl PositionalEmbeddings {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, nodes: usize, dim: usize) -> Self {
        use crate::graph::{DOW_SLOTS, TOD_SLOTS};
        Self {
            spatial: store.add_uniform("pos.spatial", (nodes, dim), 1, 0.1, rng),
            tod: store.add_uniform("pos.tod", (TOD_SLOTS, dim), 1, 0.1, rng),
            dow: store.add_uniform("pos.dow", (DOW_SLOTS, dim), 1, 0.1, rng),
        }
    }
}

/// `Y = omega2[omega1(H) || E_s || E_tod || E_dow || omega1(X0)]` per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoder {
    pub omega1: Linear,
    pub omega2: Mlp,
    pub pos: PositionalEmbeddings,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        steps: usize,
        nodes: usize,
        d: usize,
        pos_dim: usize,
        dim: usize,
        hidden: usize,
        horizon: usize,
        f_out: usize,
    ) -> Self {
        let omega1 = Linear::new(store, rng, "decoder.omega1", steps * d, dim);
        let omega2 = Mlp::new(
            store,
            rng,
            "decoder.omega2",
            &MlpShape::new(vec![2 * dim + 3 * pos_dim, hidden, horizon * f_out]),
            Activation::Relu,
        );
        let pos = PositionalEmbeddings::new(store, rng, nodes, pos_dim);
        Self { omega1, omega2, pos }
    }

    fn per_node<S: Scalar>(t: &Tape<S>, x: Var, steps: usize, nodes: usize) -> Var {
        let d = t.shape(x).1;
        t.reshape(t.swap_outer(x, steps, nodes), nodes, steps * d)
    }

    /// Returns `(T' * N) x F'`. `dropout` optionally multiplies the fused features.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Scalar>(
        &self,
        t: &Tape<S>,
        store: &ParamStore<S>,
        h: Var,
        x0: Var,
        steps: usize,
        nodes: usize,
        tod: usize,
        dow: usize,
        horizon: usize,
        dropout: Option<&ndarray::Array2<S>>,
    ) -> Var {
        let omega1 = |v: Var| t.relu(self.omega1.forward(t, store, Self::per_node(t, v, steps, nodes)));
        let hh = omega1(h);
        let xx = omega1(x0);
        let e_s = t.param(store, self.pos.spatial);
        let broadcast = vec![0; nodes];
        let e_tod = t.gather_rows(t.gather_rows(t.param(store, self.pos.tod), &[tod]), &broadcast);
        let e_dow = t.gather_rows(t.gather_rows(t.param(store, self.pos.dow), &[dow]), &broadcast);
        let mut fused = t.concat_cols(&[hh, e_s, e_tod, e_dow, xx]);
        if let Some(mask) = dropout {
            fused = t.mul(fused, t.leaf(mask.clone()));
        }
        let out = self.omega2.forward(t, store, fused);
        let f_out = t.shape(out).1 / horizon;
        t.swap_outer(t.reshape(out, nodes * horizon, f_out), nodes, horizon)
    }
}

/// Mean-pool over all `(T, N)` rows, then an MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub mlp: Mlp,
}

impl ProjectionHead {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, d: usize, out: usize) -> Self {
        Self {
            mlp: Mlp::new(store, rng, "proj", &MlpShape::new(vec![d, out, out]), Activation::Relu),
        }
    }

    pub fn forward<S: Scalar>(&self, t: &Tape<S>, store: &ParamStore<S>, h: Var) -> Var {
        self.mlp.forward(t, store, t.mean_rows(h))
    }
}
