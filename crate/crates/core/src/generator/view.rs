//! Node and edge augmentation views: sampling and application.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gin::{check_mlp, gin_layer_tape, leaf_layers};
use super::gumbel::{gumbel_softmax_tape, one_hot_argmax, sample_gumbel};
use crate::error::{shape_err, Error, Result};
use crate::graph::GraphStructure;
use crate::nn::{mlp_forward, Activation, LinearVars};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Node augmentation classes, in logit column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeAction {
    Drop = 0,
    Keep = 1,
    Mask = 2,
}

impl NodeAction {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => NodeAction::Drop,
            1 => NodeAction::Keep,
            _ => NodeAction::Mask,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeAction::Drop => "drop",
            NodeAction::Keep => "keep",
            NodeAction::Mask => "mask",
        }
    }
}

/// Edge augmentation classes, in logit column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeAction {
    Drop = 0,
    Keep = 1,
}

impl EdgeAction {
    pub const COUNT: usize = 2;

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            EdgeAction::Drop
        } else {
            EdgeAction::Keep
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeAction::Drop => "drop",
            EdgeAction::Keep => "keep",
        }
    }
}

fn argmax_row<S: Scalar>(m: &Array2<S>, r: usize) -> usize {
    let row = m.row(r);
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Per-node categorical view over {drop, keep, mask}.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeView<S> {
    /// Relaxed Gumbel-Softmax sample, `n x 3`.
    pub probs: Array2<S>,
    /// One-hot actions, `n x 3`.
    pub actions: Array2<S>,
}

impl<S: Scalar> NodeView<S> {
    /// Every node kept.
    pub fn all(n: usize, action: NodeAction) -> Self {
        let mut actions = Array2::zeros((n, NodeAction::COUNT));
        actions.column_mut(action as usize).fill(S::one());
        Self {
            probs: actions.clone(),
            actions,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn action(&self, node: usize) -> NodeAction {
        NodeAction::from_index(argmax_row(&self.actions, node))
    }
}

/// Per-edge categorical view over {drop, keep}; row `k` refers to `edges[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeView<S> {
    pub edges: Vec<(usize, usize)>,
    pub probs: Array2<S>,
    pub actions: Array2<S>,
}

impl<S: Scalar> EdgeView<S> {
    pub fn all(edges: &[(usize, usize)], action: EdgeAction) -> Self {
        let mut actions = Array2::zeros((edges.len(), EdgeAction::COUNT));
        actions.column_mut(action as usize).fill(S::one());
        Self {
            edges: edges.to_vec(),
            probs: actions.clone(),
            actions,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn action(&self, k: usize) -> EdgeAction {
        EdgeAction::from_index(argmax_row(&self.actions, k))
    }
}

/// Combined node and edge view for one graph instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationView<S> {
    pub node: NodeView<S>,
    pub edge: EdgeView<S>,
}

impl<S: Scalar> AugmentationView<S> {
    /// The identity augmentation.
    pub fn keep_all<G: GraphStructure>(graph: &G) -> Self {
        Self {
            node: NodeView::all(graph.n_nodes(), NodeAction::Keep),
            edge: EdgeView::all(graph.edges(), EdgeAction::Keep),
        }
    }

    /// Probability rows sum to one and action rows are one-hot.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (name, p, a) in [
            ("node", &self.node.probs, &self.node.actions),
            ("edge", &self.edge.probs, &self.edge.actions),
        ] {
            for row in p.rows() {
                if (row.sum().as_f64() - 1.0).abs() > tol || row.iter().any(|&v| v < S::zero()) {
                    return Err(Error::Validation(format!("{name} probabilities off the simplex")));
                }
            }
            for row in a.rows() {
                let ones = row.iter().filter(|&&v| v == S::one()).count();
                let zeros = row.iter().filter(|&&v| v == S::zero()).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::Validation(format!("{name} action row is not one-hot")));
                }
            }
        }
        Ok(())
    }
}

/// GIN weights for the node view: `theta1: f -> d1`, `theta2: d1 -> 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct GinParams<S> {
    pub theta1: Vec<(Array2<S>, Array2<S>)>,
    pub theta2: Vec<(Array2<S>, Array2<S>)>,
    pub eps1: S,
    pub eps2: S,
}

/// Edge MLP weights: `2 * d1 -> 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeViewParams<S> {
    pub theta3: Vec<(Array2<S>, Array2<S>)>,
}

fn mlp_out<S: Scalar>(theta: &[(Array2<S>, Array2<S>)]) -> usize {
    theta.last().map(|(w, _)| w.ncols()).unwrap_or(0)
}

/// Sample the node view of `graph` from its node features.
///
/// Returns the view and the first GIN embedding `h1`, which feeds [`edge_view`].
pub fn node_view<S: Scalar, G: GraphStructure, R: Rng + ?Sized>(
    graph: &G,
    features: &Array2<S>,
    gin: &GinParams<S>,
    tau: f64,
    rng: &mut R,
) -> Result<(NodeView<S>, Array2<S>)> {
    if features.nrows() != graph.n_nodes() {
        return Err(shape_err("node_view features", graph.n_nodes(), features.nrows()));
    }
    check_mlp(&gin.theta1, features.ncols())?;
    check_mlp(&gin.theta2, mlp_out(&gin.theta1))?;
    if mlp_out(&gin.theta2) != NodeAction::COUNT {
        return Err(shape_err("node view logits", NodeAction::COUNT, mlp_out(&gin.theta2)));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("gumbel temperature must be positive, got {tau}")));
    }
    let noise = sample_gumbel(rng, graph.n_nodes(), NodeAction::COUNT);
    let t = Tape::new();
    let x = t.leaf(features.clone());
    let nb = t.leaf(graph.neighbor_matrix());
    let h1 = gin_layer_tape(&t, x, nb, &leaf_layers(&t, &gin.theta1), gin.eps1);
    let h2 = gin_layer_tape(&t, h1, nb, &leaf_layers(&t, &gin.theta2), gin.eps2);
    let (soft, _) = gumbel_softmax_tape(&t, h2, &noise, tau, false);
    let probs = t.value(soft).clone();
    let actions = one_hot_argmax(&probs);
    let h1 = t.value(h1).clone();
    Ok((NodeView { probs, actions }, h1))
}

/// Sample the edge view from node embeddings `h1`, one categorical per stored edge.
pub fn edge_view<S: Scalar, G: GraphStructure, R: Rng + ?Sized>(
    h1: &Array2<S>,
    graph: &G,
    params: &EdgeViewParams<S>,
    tau: f64,
    rng: &mut R,
) -> Result<EdgeView<S>> {
    if h1.nrows() != graph.n_nodes() {
        return Err(shape_err("edge_view embeddings", graph.n_nodes(), h1.nrows()));
    }
    check_mlp(&params.theta3, 2 * h1.ncols())?;
    if mlp_out(&params.theta3) != EdgeAction::COUNT {
        return Err(shape_err("edge view logits", EdgeAction::COUNT, mlp_out(&params.theta3)));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("gumbel temperature must be positive, got {tau}")));
    }
    let edges = graph.edges().to_vec();
    if edges.is_empty() {
        return Ok(EdgeView {
            edges,
            probs: Array2::zeros((0, EdgeAction::COUNT)),
            actions: Array2::zeros((0, EdgeAction::COUNT)),
        });
    }
    let noise = sample_gumbel(rng, edges.len(), EdgeAction::COUNT);
    let t = Tape::new();
    let h = t.leaf(h1.clone());
    let logits = edge_logits_tape(&t, h, &edges, &leaf_layers(&t, &params.theta3));
    let (soft, _) = gumbel_softmax_tape(&t, logits, &noise, tau, false);
    let probs = t.value(soft).clone();
    let actions = one_hot_argmax(&probs);
    Ok(EdgeView {
        edges,
        probs,
        actions,
    })
}

/// Edge logits `MLP(h1_v || h1_u)` for every `(v, u)` in `edges`.
pub fn edge_logits_tape<S: Scalar>(
    t: &Tape<S>,
    h1: Var,
    edges: &[(usize, usize)],
    theta3: &[LinearVars],
) -> Var {
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let he = t.concat_cols(&[t.gather_rows(h1, &src), t.gather_rows(h1, &dst)]);
    mlp_forward(t, theta3, he, Activation::Relu)
}

/// Apply the edge view, then the node view.
///
/// Dropped edges leave the edge list. A dropped node has its feature row
/// zeroed and loses every incident edge; a masked node takes the mean feature
/// row of this graph instance; kept nodes are unchanged.
pub fn apply_views<S: Scalar, G: GraphStructure>(
    graph: &G,
    features: &Array2<S>,
    view: &AugmentationView<S>,
) -> Result<(G, Array2<S>)> {
    let n = graph.n_nodes();
    if features.nrows() != n || view.node.len() != n {
        return Err(shape_err("apply_views nodes", n, format!("{} features / {} view rows", features.nrows(), view.node.len())));
    }
    if view.edge.edges.as_slice() != graph.edges() {
        return Err(Error::Invalid("edge view was sampled for a different graph".into()));
    }
    let mut kept: Vec<(usize, usize)> = (0..view.edge.len())
        .filter(|&k| view.edge.action(k) == EdgeAction::Keep)
        .map(|k| view.edge.edges[k])
        .collect();

    let n_rows = S::of(n.max(1) as f64);
    let mean = features.sum_axis(ndarray::Axis(0)) / n_rows;
    let mut out = features.clone();
    let mut dropped = vec![false; n];
    for v in 0..n {
        match view.node.action(v) {
            NodeAction::Keep => {}
            NodeAction::Drop => {
                out.row_mut(v).fill(S::zero());
                dropped[v] = true;
            }
            NodeAction::Mask => out.row_mut(v).assign(&mean),
        }
    }
    kept.retain(|&(i, j)| !dropped[i] && !dropped[j]);
    Ok((graph.retain_edges(&kept)?, out))
}

/// Gumbel noise for one view sample.
#[derive(Debug, Clone)]
pub struct ViewNoise<S> {
    pub node: Array2<S>,
    pub edge: Array2<S>,
}

impl<S: Scalar> ViewNoise<S> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n_nodes: usize, n_edges: usize) -> Self {
        Self {
            node: sample_gumbel(rng, n_nodes, NodeAction::COUNT),
            edge: sample_gumbel(rng, n_edges, EdgeAction::COUNT),
        }
    }
}

/// Differentiable view sample.
#[derive(Debug, Clone, Copy)]
pub struct ViewVars {
    pub h1: Var,
    pub node_logits: Var,
    pub node_soft: Var,
    /// Node weights used for augmentation: straight-through one-hot or soft sample.
    pub node_applied: Var,
    pub edge_soft: Option<Var>,
    pub edge_applied: Option<Var>,
}

/// Sample node and edge views on the tape.
#[allow(clippy::too_many_arguments)]
pub fn sample_views_tape<S: Scalar>(
    t: &Tape<S>,
    features: Var,
    neighbors: Var,
    edges: &[(usize, usize)],
    theta: [&[LinearVars]; 3],
    eps: (S, S),
    noise: &ViewNoise<S>,
    tau: f64,
    hard: bool,
) -> ViewVars {
    let h1 = gin_layer_tape(t, features, neighbors, theta[0], eps.0);
    let node_logits = gin_layer_tape(t, h1, neighbors, theta[1], eps.1);
    let (node_soft, node_applied) = gumbel_softmax_tape(t, node_logits, &noise.node, tau, hard);
    let (edge_soft, edge_applied) = if edges.is_empty() {
        (None, None)
    } else {
        let logits = edge_logits_tape(t, h1, edges, theta[2]);
        let (s, a) = gumbel_softmax_tape(t, logits, &noise.edge, tau, hard);
        (Some(s), Some(a))
    };
    ViewVars {
        h1,
        node_logits,
        node_soft,
        node_applied,
        edge_soft,
        edge_applied,
    }
}

/// Differentiable augmentation of one graph instance.
///
/// `node_w` is `n x 3` over {drop, keep, mask}; `edge_w` is `E x 2` over
/// {drop, keep}. Returns the augmented features and the `n x n` attention
/// support: edge keep weight times both endpoints' survival, plus self-loops.
pub fn apply_views_tape<S: Scalar>(
    t: &Tape<S>,
    features: Var,
    node_w: Var,
    edge_w: Option<Var>,
    edges: &[(usize, usize)],
) -> (Var, Var) {
    let n = t.shape(features).0;
    let drop = t.slice_cols(node_w, NodeAction::Drop as usize, 1);
    let keep = t.slice_cols(node_w, NodeAction::Keep as usize, 1);
    let mask = t.slice_cols(node_w, NodeAction::Mask as usize, 1);
    let mean = t.gather_rows(t.mean_rows(features), &vec![0; n]);
    let augmented = t.add(t.mul_col(features, keep), t.mul_col(mean, mask));

    let eye = t.leaf(Array2::eye(n));
    let support = match edge_w {
        Some(ew) if !edges.is_empty() => {
            let alive = t.rsub_scalar(S::one(), drop);
            let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
            let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
            let keep_e = t.slice_cols(ew, EdgeAction::Keep as usize, 1);
            let w = t.mul(t.mul(keep_e, t.gather_rows(alive, &src)), t.gather_rows(alive, &dst));
            t.add(t.scatter(w, edges, n, n), eye)
        }
        _ => eye,
    };
    (augmented, support)
}

/// Attention support of an unaugmented graph: stored edges plus self-loops.
pub fn support_matrix<S: Scalar, G: GraphStructure>(graph: &G) -> Array2<S> {
    let mut m: Array2<S> = graph.neighbor_matrix();
    for i in 0..graph.n_nodes() {
        m[[i, i]] = S::one();
    }
    m
}
