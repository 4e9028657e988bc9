use ndarray::Array2;

use crate::error::{shape_err, Result};
use crate::graph::GraphStructure;
use crate::nn::{mlp_forward, Activation, LinearVars};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// `h'_v = MLP((1 + eps) h_v + sum_{u in N(v)} h_u)` on the tape.
///
/// `neighbors` is the binary `n x n` edge matrix (no self-loops).
pub fn gin_layer_tape<S: Scalar>(
    t: &Tape<S>,
    h: Var,
    neighbors: Var,
    theta: &[LinearVars],
    eps: S,
) -> Var {
    let agg = t.add(t.scale(h, S::one() + eps), t.matmul(neighbors, h));
    mlp_forward(t, theta, agg, Activation::Relu)
}

/// One GIN layer over `graph` with MLP weights `theta` given as `(W, b)` pairs.
pub fn gin_layer<S: Scalar, G: GraphStructure>(
    h: &Array2<S>,
    graph: &G,
    theta: &[(Array2<S>, Array2<S>)],
    eps: S,
) -> Result<Array2<S>> {
    if h.nrows() != graph.n_nodes() {
        return Err(shape_err("gin_layer rows", graph.n_nodes(), h.nrows()));
    }
    check_mlp(theta, h.ncols())?;
    let t = Tape::new();
    let hv = t.leaf(h.clone());
    let nb = t.leaf(graph.neighbor_matrix());
    let layers = leaf_layers(&t, theta);
    let out = gin_layer_tape(&t, hv, nb, &layers, eps);
    let v = t.value(out).clone();
    Ok(v)
}

pub(crate) fn leaf_layers<S: Scalar>(t: &Tape<S>, theta: &[(Array2<S>, Array2<S>)]) -> Vec<LinearVars> {
    theta
        .iter()
        .map(|(w, b)| LinearVars {
            w: t.leaf(w.clone()),
            b: t.leaf(b.clone()),
        })
        .collect()
}

pub(crate) fn check_mlp<S: Scalar>(theta: &[(Array2<S>, Array2<S>)], input: usize) -> Result<()> {
    let mut width = input;
    for (w, b) in theta {
        if w.nrows() != width || b.dim() != (1, w.ncols()) {
            return Err(shape_err(
                "mlp weights",
                format!("({width}, _) with matching bias"),
                format!("{:?} + {:?}", w.dim(), b.dim()),
            ));
        }
        width = w.ncols();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid_graph, Neighborhood, SpatialGraph};
    use crate::testutil::{check_grad, rand_array};
    use ndarray::array;

    fn identity(n: usize) -> Vec<(Array2<f64>, Array2<f64>)> {
        vec![(Array2::eye(n), Array2::zeros((1, n)))]
    }

    #[test]
    fn isolated_node_is_unchanged() {
        let g = build_grid_graph(1, 1, Neighborhood::Four).unwrap();
        let h = array![[1.5, -2.0]];
        assert_eq!(gin_layer(&h, &g, &identity(2), 0.0).unwrap(), h);
    }

    #[test]
    fn two_connected_equal_nodes_double() {
        let g = SpatialGraph::from_adjacency(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let h = array![[0.3, 0.7], [0.3, 0.7]];
        let out = gin_layer(&h, &g, &identity(2), 0.0).unwrap();
        assert_eq!(out, &h * 2.0);
    }

    #[test]
    fn eps_one_without_neighbors_doubles() {
        let g = SpatialGraph::from_adjacency(Array2::zeros((3, 3))).unwrap();
        let h = rand_array(3, 2, 1);
        let out = gin_layer(&h, &g, &identity(2), 1.0).unwrap();
        assert_eq!(out, &h * 2.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = build_grid_graph(2, 2, Neighborhood::Four).unwrap();
        assert!(gin_layer(&rand_array(3, 2, 1), &g, &identity(2), 0.0).is_err());
        assert!(gin_layer(&rand_array(4, 3, 1), &g, &identity(2), 0.0).is_err());
    }

    #[test]
    fn gin_gradients() {
        let g = build_grid_graph(2, 3, Neighborhood::Eight).unwrap();
        let nb: Array2<f64> = g.neighbor_matrix();
        check_grad(
            &[rand_array(6, 3, 1), rand_array(3, 5, 2), rand_array(1, 5, 3), rand_array(5, 2, 4), rand_array(1, 2, 5)],
            |t, v| {
                let n = t.leaf(nb.clone());
                let layers = [LinearVars { w: v[1], b: v[2] }, LinearVars { w: v[3], b: v[4] }];
                let out = gin_layer_tape(t, v[0], n, &layers, 0.3);
                t.sum(t.square(out))
            },
        );
    }
}
