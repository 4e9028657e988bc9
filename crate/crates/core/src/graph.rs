//! Spatio-temporal graph domain types and deterministic graph construction.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Number of time-of-day slots (5-minute resolution).
pub const TOD_SLOTS: usize = 288;
/// Number of day-of-week slots.
pub const DOW_SLOTS: usize = 7;

/// Dense signal tensor of shape `(T, N, F)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct FeatureTensor<S = f64> {
    data: Array3<S>,
}

impl<S: Scalar> FeatureTensor<S> {
    /// Wrap an array, rejecting non-finite entries.
    pub fn new(data: Array3<S>) -> Result<Self> {
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature tensor at (t={}, n={}, f={})",
                idx.0, idx.1, idx.2
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(steps: usize, nodes: usize, features: usize) -> Self {
        Self {
            data: Array3::zeros((steps, nodes, features)),
        }
    }

    /// Build from a `(T*N) x F` matrix with row index `t*N + n`.
    pub fn from_matrix(m: &Array2<S>, steps: usize, nodes: usize) -> Result<Self> {
        if m.nrows() != steps * nodes {
            return Err(shape_err("feature tensor rows", steps * nodes, m.nrows()));
        }
        let f = m.ncols();
        let flat: Vec<S> = m.iter().copied().collect();
        Self::new(Array3::from_shape_vec((steps, nodes, f), flat).expect("sized"))
    }

    pub fn steps(&self) -> usize {
        self.data.dim().0
    }

    pub fn nodes(&self) -> usize {
        self.data.dim().1
    }

    pub fn features(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<S> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<S> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<S> {
        self.data
    }

    /// The `(T*N) x F` matrix view used by the model.
    pub fn to_matrix(&self) -> Array2<S> {
        let (t, n, f) = self.shape();
        let flat: Vec<S> = self.data.iter().copied().collect();
        Array2::from_shape_vec((t * n, f), flat).expect("sized")
    }

    /// Steps `[start, end)` as a new tensor.
    pub fn slice_steps(&self, start: usize, end: usize) -> Self {
        Self {
            data: self.data.slice(s![start..end, .., ..]).to_owned(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureTensor<U> {
        FeatureTensor {
            data: self.data.mapv(|v| U::of(v.as_f64())),
        }
    }
}

/// Common read access to spatial and temporal graphs.
///
/// Edges are directed pairs `(i, j)`, `i != j`; an undirected link appears in
/// both directions. Self-loops are never stored.
pub trait GraphStructure {
    fn n_nodes(&self) -> usize;
    fn edges(&self) -> &[(usize, usize)];

    /// Same node set keeping only `edges`, each of which must already be stored.
    fn retain_edges(&self, edges: &[(usize, usize)]) -> Result<Self>
    where
        Self: Sized;

    /// Binary `n x n` matrix with ones at stored edges.
    fn neighbor_matrix<S: Scalar>(&self) -> Array2<S> {
        let n = self.n_nodes();
        let mut m = Array2::zeros((n, n));
        for &(i, j) in self.edges() {
            m[[i, j]] = S::one();
        }
        m
    }
}

/// Sensor or grid graph over the `N` spatial units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    n_nodes: usize,
    adjacency: Array2<f64>,
    edge_list: Vec<(usize, usize)>,
}

impl SpatialGraph {
    /// Build from a non-negative adjacency matrix; the diagonal is ignored.
    pub fn from_adjacency(mut adjacency: Array2<f64>) -> Result<Self> {
        let (r, c) = adjacency.dim();
        if r != c {
            return Err(shape_err("adjacency", "square matrix", format!("{r}x{c}")));
        }
        if adjacency.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(
                "adjacency entries must be finite and non-negative".into(),
            ));
        }
        for i in 0..r {
            adjacency[[i, i]] = 0.0;
        }
        let edge_list = (0..r)
            .flat_map(|i| (0..r).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && adjacency[[i, j]] > 0.0)
            .collect();
        Ok(Self {
            n_nodes: r,
            adjacency,
            edge_list,
        })
    }

    /// Same node set keeping only `edges`, each of which must already be present.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = Array2::zeros(self.adjacency.dim());
        for &(i, j) in edges {
            if i >= self.n_nodes || j >= self.n_nodes || self.adjacency[[i, j]] <= 0.0 {
                return Err(Error::Invalid(format!("edge ({i}, {j}) not in graph")));
            }
            adjacency[[i, j]] = self.adjacency[[i, j]];
        }
        Self::from_adjacency(adjacency)
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edge_list.iter().filter(|&&(i, _)| i == node).count()
    }

    /// Number of unordered node pairs joined in either direction.
    pub fn undirected_edge_count(&self) -> usize {
        self.edge_list
            .iter()
            .filter(|&&(i, j)| i < j || self.adjacency[[j, i]] <= 0.0)
            .count()
    }

    pub fn is_symmetric(&self) -> bool {
        let a = &self.adjacency;
        (0..self.n_nodes).all(|i| (0..self.n_nodes).all(|j| a[[i, j]] == a[[j, i]]))
    }

    /// Relabel nodes: new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes;
        if perm.len() != n {
            return Err(shape_err("permutation", n, perm.len()));
        }
        let a = Array2::from_shape_fn((n, n), |(i, j)| self.adjacency[[perm[i], perm[j]]]);
        Self::from_adjacency(a)
    }
}

impl GraphStructure for SpatialGraph {
    fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    fn edges(&self) -> &[(usize, usize)] {
        &self.edge_list
    }

    fn retain_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        self.with_edges(edges)
    }
}

/// Graph over the `T` input time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalGraph {
    n_steps: usize,
    adjacency: Array2<f64>,
    edge_list: Vec<(usize, usize)>,
}

impl TemporalGraph {
    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    /// Keep only `edges` (each must be present); the diagonal stays set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        let n = self.n_steps;
        let mut adjacency = Array2::eye(n);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j || self.adjacency[[i, j]] <= 0.0 {
                return Err(Error::Invalid(format!("edge ({i}, {j}) not in graph")));
            }
            adjacency[[i, j]] = 1.0;
        }
        let mut edge_list = edges.to_vec();
        edge_list.sort_unstable();
        edge_list.dedup();
        Ok(Self {
            n_steps: n,
            adjacency,
            edge_list,
        })
    }
}

impl GraphStructure for TemporalGraph {
    fn n_nodes(&self) -> usize {
        self.n_steps
    }

    fn edges(&self) -> &[(usize, usize)] {
        &self.edge_list
    }

    fn retain_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        self.with_edges(edges)
    }
}

/// One forecasting example: `T` input steps and the `T'` steps that follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct StgSample<S = f64> {
    pub x: FeatureTensor<S>,
    pub y: FeatureTensor<S>,
    pub tod_index: Vec<u16>,
    pub dow_index: Vec<u8>,
    /// Source step index of the first input step.
    pub start: usize,
}

impl<S: Scalar> StgSample<S> {
    pub fn validate(&self) -> Result<()> {
        let t = self.x.steps();
        if self.tod_index.len() != t || self.dow_index.len() != t {
            return Err(shape_err("time indices", t, self.tod_index.len()));
        }
        if self.tod_index.iter().any(|&v| v as usize >= TOD_SLOTS) {
            return Err(Error::Validation("time-of-day index out of range".into()));
        }
        if self.dow_index.iter().any(|&v| v as usize >= DOW_SLOTS) {
            return Err(Error::Validation("day-of-week index out of range".into()));
        }
        if self.x.nodes() != self.y.nodes() {
            return Err(shape_err("sample nodes", self.x.nodes(), self.y.nodes()));
        }
        Ok(())
    }
}

/// Neighbourhood used for grid graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    #[default]
    Four,
    Eight,
}

/// Standard deviation of the finite off-diagonal distances, the default kernel width.
pub fn default_sigma(distances: &Array2<f64>) -> f64 {
    let n = distances.nrows();
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .map(|(i, j)| distances[[i, j]])
        .filter(|v| v.is_finite())
        .collect();
    if vals.is_empty() {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    let std = var.sqrt();
    if std > 0.0 {
        std
    } else if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

pub const DEFAULT_KAPPA: f64 = 0.1;

/// Thresholded Gaussian kernel graph: `w_ij = exp(-d_ij^2 / sigma^2)` kept when `>= kappa`.
///
/// Infinite distances denote unconnected pairs.
pub fn build_sensor_graph(distances: &Array2<f64>, sigma: f64, kappa: f64) -> Result<SpatialGraph> {
    let (r, c) = distances.dim();
    if r != c {
        return Err(shape_err("distance matrix", "square matrix", format!("{r}x{c}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::Invalid(format!("kappa must be non-negative, got {kappa}")));
    }
    for i in 0..r {
        if distances[[i, i]] != 0.0 {
            return Err(Error::Validation(format!("distance diagonal at {i} is not zero")));
        }
        for j in 0..r {
            let d = distances[[i, j]];
            if d.is_nan() || d < 0.0 {
                return Err(Error::Validation(format!("negative or NaN distance at ({i}, {j})")));
            }
            if d != distances[[j, i]] {
                return Err(Error::Validation(format!("distance matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let adjacency = Array2::from_shape_fn((r, r), |(i, j)| {
        if i == j {
            return 0.0;
        }
        let d = distances[[i, j]];
        let w = (-(d * d) / (sigma * sigma)).exp();
        if w >= kappa {
            w
        } else {
            0.0
        }
    });
    SpatialGraph::from_adjacency(adjacency)
}

/// Binary grid graph over `rows x cols` cells, cell `(r, c)` is node `r*cols + c`.
pub fn build_grid_graph(rows: usize, cols: usize, neighborhood: Neighborhood) -> Result<SpatialGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid(format!("grid must be non-empty, got {rows}x{cols}")));
    }
    let n = rows * cols;
    let mut a = Array2::zeros((n, n));
    let offsets: &[(i64, i64)] = match neighborhood {
        Neighborhood::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Neighborhood::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            for (dr, dc) in offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && nr < rows as i64 && nc < cols as i64 {
                    let i = (r * cols as i64 + c) as usize;
                    let j = (nr * cols as i64 + nc) as usize;
                    a[[i, j]] = 1.0;
                }
            }
        }
    }
    SpatialGraph::from_adjacency(a)
}

/// Fully connected temporal graph: every step influences every other.
pub fn build_temporal_graph(steps: usize) -> Result<TemporalGraph> {
    if steps == 0 {
        return Err(Error::Invalid("temporal graph needs at least one step".into()));
    }
    let edge_list = (0..steps)
        .flat_map(|i| (0..steps).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .collect();
    Ok(TemporalGraph {
        n_steps: steps,
        adjacency: Array2::ones((steps, steps)),
        edge_list,
    })
}
