//! Multi-head graph attention over a weighted support matrix.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::HeadMerge;
use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Tape handles of one GAT layer.
///
/// `w` is `d_in x (heads * head_dim)` with head `k` in column block `k`;
/// `a_src` and `a_dst` are `head_dim x heads`.
#[derive(Debug, Clone, Copy)]
pub struct GatVars {
    pub w: Var,
    pub a_src: Var,
    pub a_dst: Var,
    pub heads: usize,
    pub merge: HeadMerge,
}

/// Output of one GAT layer; `alphas` holds the `n x n` attention of every head.
#[derive(Debug, Clone)]
pub struct GatOutput {
    pub out: Var,
    pub alphas: Vec<Var>,
}

/// `alpha_ij ∝ support_ij * exp(LeakyReLU(a_src . W x_i + a_dst . W x_j))`,
/// head output `sum_j alpha_ij W x_j`. `support` must have a positive diagonal
/// (self-loops); binary support gives the usual neighbourhood softmax over
/// `N(i) ∪ {i}`.
pub fn gat_forward<S: Scalar>(t: &Tape<S>, x: Var, support: Var, p: &GatVars, slope: S) -> GatOutput {
    let wx = t.matmul(x, p.w);
    let head_dim = t.shape(p.a_src).0;
    let mut outs = Vec::with_capacity(p.heads);
    let mut alphas = Vec::with_capacity(p.heads);
    for k in 0..p.heads {
        let h = t.slice_cols(wx, k * head_dim, head_dim);
        let src = t.matmul(h, t.slice_cols(p.a_src, k, 1));
        let dst = t.matmul(h, t.slice_cols(p.a_dst, k, 1));
        let logits = t.leaky_relu(t.outer_add(src, t.transpose(dst)), slope);
        let alpha = t.weighted_softmax_rows(logits, support);
        outs.push(t.matmul(alpha, h));
        alphas.push(alpha);
    }
    let out = match p.merge {
        HeadMerge::Concat => t.concat_cols(&outs),
        HeadMerge::Mean => {
            let sum = outs.iter().skip(1).fold(outs[0], |acc, &o| t.add(acc, o));
            t.scale(sum, S::of(1.0 / p.heads as f64))
        }
    };
    GatOutput { out, alphas }
}

/// Stored GAT layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatLayer {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub heads: usize,
    pub merge: HeadMerge,
}

impl GatLayer {
    /// Layer `d_in -> width`. Concatenated heads each produce `width / heads`
    /// columns; averaged heads each produce `width`.
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        width: usize,
        heads: usize,
        merge: HeadMerge,
    ) -> Result<Self> {
        if heads == 0 || width == 0 {
            return Err(Error::Invalid(format!("{name}: heads and width must be positive")));
        }
        let head_dim = match merge {
            HeadMerge::Concat => {
                if width % heads != 0 {
                    return Err(shape_err("gat head split", format!("multiple of {heads}"), width));
                }
                width / heads
            }
            HeadMerge::Mean => width,
        };
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), (d_in, heads * head_dim), d_in, 1.0, rng),
            a_src: store.add_uniform(format!("{name}.a_src"), (head_dim, heads), head_dim, 1.0, rng),
            a_dst: store.add_uniform(format!("{name}.a_dst"), (head_dim, heads), head_dim, 1.0, rng),
            heads,
            merge,
        })
    }

    pub fn vars<S: Scalar>(&self, t: &Tape<S>, store: &ParamStore<S>) -> GatVars {
        GatVars {
            w: t.param(store, self.w),
            a_src: t.param(store, self.a_src),
            a_dst: t.param(store, self.a_dst),
            heads: self.heads,
            merge: self.merge,
        }
    }
}

/// Value-level GAT layer: returns the output and each head's attention matrix.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer<S: Scalar>(
    x: &Array2<S>,
    support: &Array2<S>,
    w: &Array2<S>,
    a_src: &Array2<S>,
    a_dst: &Array2<S>,
    heads: usize,
    merge: HeadMerge,
    slope: f64,
) -> Result<(Array2<S>, Vec<Array2<S>>)> {
    let n = x.nrows();
    if support.dim() != (n, n) {
        return Err(shape_err("gat support", format!("({n}, {n})"), format!("{:?}", support.dim())));
    }
    if w.nrows() != x.ncols() {
        return Err(shape_err("gat input width", w.nrows(), x.ncols()));
    }
    if a_src.dim() != a_dst.dim() || a_src.ncols() != heads || heads * a_src.nrows() != w.ncols() {
        return Err(shape_err(
            "gat attention vectors",
            format!("({}, {heads})", w.ncols() / heads.max(1)),
            format!("{:?}", a_src.dim()),
        ));
    }
    if (0..n).any(|i| !(support[[i, i]] > S::zero())) {
        return Err(Error::Invalid("gat support needs self-loops".into()));
    }
    let t = Tape::new();
    let p = GatVars {
        w: t.leaf(w.clone()),
        a_src: t.leaf(a_src.clone()),
        a_dst: t.leaf(a_dst.clone()),
        heads,
        merge,
    };
    let xv = t.leaf(x.clone());
    let sv = t.leaf(support.clone());
    let o = gat_forward(&t, xv, sv, &p, S::of(slope));
    let out = t.value(o.out).clone();
    let alphas = o.alphas.iter().map(|&a| t.value(a).clone()).collect();
    Ok((out, alphas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_grad, rand_array};
    use ndarray::array;

    fn leaky(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            0.2 * v
        }
    }

    // Direct loop over heads, nodes and neighbours.
    fn oracle(
        x: &Array2<f64>,
        adj: &Array2<f64>,
        w: &Array2<f64>,
        a_src: &Array2<f64>,
        a_dst: &Array2<f64>,
        heads: usize,
    ) -> Array2<f64> {
        let n = x.nrows();
        let hd = a_src.nrows();
        let wx = x.dot(w);
        let mut out = Array2::zeros((n, heads * hd));
        for k in 0..heads {
            for i in 0..n {
                let nb: Vec<usize> = (0..n).filter(|&j| j == i || adj[[i, j]] > 0.0).collect();
                let score = |j: usize| {
                    let mut e = 0.0;
                    for c in 0..hd {
                        e += a_src[[c, k]] * wx[[i, k * hd + c]] + a_dst[[c, k]] * wx[[j, k * hd + c]];
                    }
                    leaky(e).exp()
                };
                let z: f64 = nb.iter().map(|&j| score(j)).sum();
                for &j in &nb {
                    let a = score(j) / z;
                    for c in 0..hd {
                        out[[i, k * hd + c]] += a * wx[[j, k * hd + c]];
                    }
                }
            }
        }
        out
    }

    fn support(adj: &Array2<f64>) -> Array2<f64> {
        adj + &Array2::<f64>::eye(adj.nrows())
    }

    #[test]
    fn matches_loop_oracle() {
        let adj = array![[0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]];
        let x = rand_array(4, 5, 1);
        let w = rand_array(5, 6, 2);
        let (a_s, a_d) = (rand_array(3, 2, 3), rand_array(3, 2, 4));
        let (out, alphas) = gat_layer(&x, &support(&adj), &w, &a_s, &a_d, 2, HeadMerge::Concat, 0.2).unwrap();
        let exp = oracle(&x, &adj, &w, &a_s, &a_d, 2);
        assert!((&out - &exp).mapv(f64::abs).iter().all(|&d| d < 1e-12));
        for a in &alphas {
            for (i, row) in a.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                for j in 0..4 {
                    if i != j && adj[[i, j]] == 0.0 {
                        assert_eq!(row[j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn single_node_attends_to_itself() {
        let x = rand_array(1, 3, 1);
        let w = rand_array(3, 4, 2);
        let (out, alphas) =
            gat_layer(&x, &Array2::eye(1), &w, &rand_array(2, 2, 3), &rand_array(2, 2, 4), 2, HeadMerge::Concat, 0.2)
                .unwrap();
        assert_eq!(alphas[0][[0, 0]], 1.0);
        assert!((&out - &x.dot(&w)).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn equal_features_split_attention_evenly() {
        let x = array![[0.3, -0.7], [0.3, -0.7]];
        let s = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, alphas) =
            gat_layer(&x, &s, &rand_array(2, 2, 1), &rand_array(2, 1, 2), &rand_array(2, 1, 3), 1, HeadMerge::Concat, 0.2)
                .unwrap();
        assert!(alphas[0].iter().all(|&a| (a - 0.5).abs() < 1e-12));
    }

    #[test]
    fn mean_merge_averages_heads() {
        let adj = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let x = rand_array(3, 2, 1);
        let w = rand_array(2, 8, 2);
        let (a_s, a_d) = (rand_array(4, 2, 3), rand_array(4, 2, 4));
        let (mean, _) = gat_layer(&x, &support(&adj), &w, &a_s, &a_d, 2, HeadMerge::Mean, 0.2).unwrap();
        let (cat, _) = gat_layer(&x, &support(&adj), &w, &a_s, &a_d, 2, HeadMerge::Concat, 0.2).unwrap();
        let avg = (&cat.slice(ndarray::s![.., 0..4]) + &cat.slice(ndarray::s![.., 4..8])) / 2.0;
        assert!((&mean - &avg).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = rand_array(3, 2, 1);
        let w = rand_array(2, 4, 2);
        let a = rand_array(2, 2, 3);
        assert!(gat_layer(&x, &Array2::eye(2), &w, &a, &a, 2, HeadMerge::Concat, 0.2).is_err());
        assert!(gat_layer(&x, &Array2::eye(3), &rand_array(3, 4, 1), &a, &a, 2, HeadMerge::Concat, 0.2).is_err());
        assert!(gat_layer(&x, &Array2::zeros((3, 3)), &w, &a, &a, 2, HeadMerge::Concat, 0.2).is_err());
    }

    #[test]
    fn gradients_including_soft_support() {
        let s = array![[1.0, 0.6, 0.0], [0.3, 1.0, 0.9], [0.0, 0.5, 1.0]];
        check_grad(
            &[rand_array(3, 4, 1), rand_array(4, 6, 2), rand_array(3, 2, 3), rand_array(3, 2, 4), s],
            |t, v| {
                let p = GatVars { w: v[1], a_src: v[2], a_dst: v[3], heads: 2, merge: HeadMerge::Concat };
                let o = gat_forward(t, v[0], v[4], &p, 0.2);
                t.sum(t.square(o.out))
            },
        );
    }
}
