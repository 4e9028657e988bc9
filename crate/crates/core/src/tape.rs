//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of
//! a scalar output with respect to every recorded node. Every tensor in the
//! model is a matrix; higher-rank tensors are stored with their leading axes
//! folded into rows (a `T x N x d` tensor lives as a `(T*N) x d` matrix with
//! row index `t*N + n`).

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, S),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Huber(Var, S),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    SumCols(Var),
    Reshape(Var),
    SwapOuter(Var, usize, usize),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Scatter(Var, Vec<(usize, usize)>),
    OuterAdd(Var, Var),
    SoftmaxRows(Var),
    WeightedSoftmaxRows(Var, Var),
    LogSumExpRows(Var, Array2<S>),
    RowNormalize(Var),
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Array2<S>,
    op: Op<S>,
}

/// Operation record. Interior mutability lets expressions nest freely:
/// `t.add(t.matmul(x, w), b)`.
#[derive(Debug, Default)]
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

/// Gradients produced by [`Tape::backward`], one optional entry per node.
#[derive(Debug)]
pub struct Grads<S> {
    grads: Vec<Option<Array2<S>>>,
    params: Vec<(ParamId, Var)>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Array2<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(shape))
    }

    /// Gradients of every parameter that was bound on the tape, sorted by id.
    pub fn param_grads(&self) -> Vec<(ParamId, &Array2<S>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Array2<S>>], v: Var, delta: Array2<S>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<S>, op: Op<S>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Array2<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> S {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// A non-parameter input. Gradients still flow into it and can be read back.
    pub fn leaf(&self, value: Array2<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&self, value: S) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    /// Bind a stored parameter. Repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.borrow_mut().insert(id, v);
        v
    }

    fn unary(&self, a: Var, f: impl Fn(&Array2<S>) -> Array2<S>, op: Op<S>) -> Var {
        let value = f(&self.value(a));
        self.push(value, op)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions");
            va.dot(&*vb)
        };
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.dim(), vb.dim(), "add shapes");
            &*va + &*vb
        };
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.dim(), vb.dim(), "sub shapes");
            &*va - &*vb
        };
        self.push(value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.dim(), vb.dim(), "mul shapes");
            &*va * &*vb
        };
        self.push(value, Op::Mul(a, b))
    }

    /// `a + row`, broadcasting a `1 x c` row over every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = {
            let (va, vr) = (self.value(a), self.value(row));
            assert_eq!(vr.dim(), (1, va.ncols()), "add_row shapes");
            &*va + &*vr
        };
        self.push(value, Op::AddRow(a, row))
    }

    /// `a * col`, scaling row `i` of `a` by `col[i]`.
    pub fn mul_col(&self, a: Var, col: Var) -> Var {
        let value = {
            let (va, vc) = (self.value(a), self.value(col));
            assert_eq!(vc.dim(), (va.nrows(), 1), "mul_col shapes");
            &*va * &*vc
        };
        self.push(value, Op::MulCol(a, col))
    }

    pub fn scale(&self, a: Var, c: S) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&self, a: Var, c: S) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `c - a`
    pub fn rsub_scalar(&self, c: S, a: Var) -> Var {
        let neg = self.scale(a, -S::one());
        self.add_scalar(neg, c)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(|v| v.max(S::zero())), Op::Relu(a))
    }

    pub fn elu(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.mapv(|v| if v > S::zero() { v } else { v.exp_m1() }),
            Op::Elu(a),
        )
    }

    pub fn leaky_relu(&self, a: Var, slope: S) -> Var {
        self.unary(
            a,
            |x| x.mapv(|v| if v > S::zero() { v } else { v * slope }),
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(S::exp), Op::Exp(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(S::ln), Op::Ln(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(|v| v * v), Op::Square(a))
    }

    /// Elementwise Huber penalty of a residual.
    pub fn huber(&self, a: Var, delta: S) -> Var {
        let half = S::of(0.5);
        self.unary(
            a,
            |x| {
                x.mapv(|r| {
                    let ar = r.abs();
                    if ar <= delta {
                        half * r * r
                    } else {
                        delta * (ar - half * delta)
                    }
                })
            },
            Op::Huber(a, delta),
        )
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| Array2::from_elem((1, 1), x.sum()),
            Op::SumAll(a),
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let n = S::of(x.len() as f64);
                Array2::from_elem((1, 1), x.sum() / n)
            },
            Op::MeanAll(a),
        )
    }

    /// Column means: `r x c -> 1 x c`.
    pub fn mean_rows(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let n = S::of(x.nrows() as f64);
                (x.sum_axis(Axis(0)) / n).insert_axis(Axis(0))
            },
            Op::MeanRows(a),
        )
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::SumCols(a),
        )
    }

    /// Row-major reshape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        self.unary(
            a,
            |x| {
                assert_eq!(x.len(), rows * cols, "reshape size");
                let flat: Vec<S> = x.iter().copied().collect();
                Array2::from_shape_vec((rows, cols), flat).expect("reshape")
            },
            Op::Reshape(a),
        )
    }

    /// Swap the two folded row axes: row `o*inner + i` moves to `i*outer + o`.
    pub fn swap_outer(&self, a: Var, outer: usize, inner: usize) -> Var {
        let value = swap_outer_array(&self.value(a), outer, inner);
        self.push(value, Op::SwapOuter(a, outer, inner))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, |x| x.t().to_owned(), Op::Transpose(a))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
            concatenate(Axis(1), &views).expect("concat_cols rows agree")
        };
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
            concatenate(Axis(0), &views).expect("concat_rows cols agree")
        };
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(
            a,
            |x| x.slice(s![.., start..start + len]).to_owned(),
            Op::SliceCols(a, start),
        )
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(
            a,
            |x| x.slice(s![start..start + len, ..]).to_owned(),
            Op::SliceRows(a, start),
        )
    }

    /// Row `k` of the output is row `idx[k]` of `a`.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        let value = {
            let x = self.value(a);
            let mut out = Array2::zeros((idx.len(), x.ncols()));
            for (k, &i) in idx.iter().enumerate() {
                out.row_mut(k).assign(&x.row(i));
            }
            out
        };
        self.push(value, Op::GatherRows(a, idx.to_vec()))
    }

    /// Place the `E x 1` column `vals` at matrix positions `pos` of a zero `rows x cols` matrix.
    pub fn scatter(&self, vals: Var, pos: &[(usize, usize)], rows: usize, cols: usize) -> Var {
        let value = {
            let v = self.value(vals);
            assert_eq!(v.dim(), (pos.len(), 1), "scatter shapes");
            let mut out = Array2::zeros((rows, cols));
            for (k, &(i, j)) in pos.iter().enumerate() {
                out[[i, j]] = out[[i, j]] + v[[k, 0]];
            }
            out
        };
        self.push(value, Op::Scatter(vals, pos.to_vec()))
    }

    /// `out[i][j] = col[i] + row[j]` for an `r x 1` column and a `1 x c` row.
    pub fn outer_add(&self, col: Var, row: Var) -> Var {
        let value = {
            let (vc, vr) = (self.value(col), self.value(row));
            assert_eq!(vc.ncols(), 1, "outer_add column");
            assert_eq!(vr.nrows(), 1, "outer_add row");
            let mut out = Array2::zeros((vc.nrows(), vr.ncols()));
            Zip::indexed(&mut out).for_each(|(i, j), o| *o = vc[[i, 0]] + vr[[0, j]]);
            out
        };
        self.push(value, Op::OuterAdd(col, row))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let value = softmax_rows_array(&self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row softmax with non-negative multiplicative weights:
    /// `out[i][j] = w[i][j] exp(l[i][j]) / sum_k w[i][k] exp(l[i][k])`.
    /// With 0/1 weights this is a masked softmax; gradients also reach `w`.
    pub fn weighted_softmax_rows(&self, logits: Var, weights: Var) -> Var {
        let value = {
            let (l, w) = (self.value(logits), self.value(weights));
            assert_eq!(l.dim(), w.dim(), "weighted_softmax shapes");
            let (q, z) = weighted_exp(&l, &w);
            let mut out = &q * &*w;
            for (mut row, zi) in out.rows_mut().into_iter().zip(z.iter()) {
                row.mapv_inplace(|v| v / *zi);
            }
            out
        };
        self.push(value, Op::WeightedSoftmaxRows(logits, weights))
    }

    /// Per-row `log sum_j mask[i][j] exp(a[i][j])`, returned as an `r x 1` column.
    pub fn logsumexp_rows(&self, a: Var, mask: Array2<S>) -> Var {
        let value = {
            let x = self.value(a);
            assert_eq!(x.dim(), mask.dim(), "logsumexp mask shape");
            let (_, lse) = masked_lse(&x, &mask);
            lse.insert_axis(Axis(1))
        };
        self.push(value, Op::LogSumExpRows(a, mask))
    }

    /// Divide each row by its Euclidean norm.
    pub fn row_normalize(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let mut out = x.clone();
                for mut row in out.rows_mut() {
                    let n = row.dot(&row).sqrt();
                    row.mapv_inplace(|v| v / n);
                }
                out
            },
            Op::RowNormalize(a),
        )
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&self, soft: Var, hard: Array2<S>) -> Var {
        assert_eq!(self.shape(soft), hard.dim(), "straight_through shape");
        self.push(hard, Op::StraightThrough(soft))
    }

    /// Gradient of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Grads<S> {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        self.backward_seeded(&[(out, Array2::from_elem((1, 1), S::one()))])
    }

    /// Reverse pass seeded with explicit upstream gradients on several nodes.
    pub fn backward_seeded(&self, seeds: &[(Var, Array2<S>)]) -> Grads<S> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array2<S>>> = vec![None; nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            assert_eq!(nodes[v.0].value.dim(), g.dim(), "seed shape");
            acc(&mut grads, *v, g.clone());
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.params.borrow().iter().map(|(&id, &v)| (id, v)).collect();
        Grads { grads, params }
    }
}

fn backprop_node<S: Scalar>(
    nodes: &[Node<S>],
    i: usize,
    g: &Array2<S>,
    grads: &mut [Option<Array2<S>>],
) {
    let val = |v: &Var| &nodes[v.0].value;
    let out = &nodes[i].value;
    let zero = S::zero();
    match &nodes[i].op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            acc(grads, *a, g.dot(&val(b).t()));
            acc(grads, *b, val(a).t().dot(g));
        }
        Op::Add(a, b) => {
            acc(grads, *a, g.clone());
            acc(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            acc(grads, *a, g.clone());
            acc(grads, *b, g.mapv(|v| -v));
        }
        Op::Mul(a, b) => {
            acc(grads, *a, g * val(b));
            acc(grads, *b, g * val(a));
        }
        Op::AddRow(a, r) => {
            acc(grads, *a, g.clone());
            acc(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        Op::MulCol(a, c) => {
            acc(grads, *a, g * val(c));
            let gc = (g * val(a)).sum_axis(Axis(1)).insert_axis(Axis(1));
            acc(grads, *c, gc);
        }
        Op::Scale(a, c) => acc(grads, *a, g * *c),
        Op::AddScalar(a) => acc(grads, *a, g.clone()),
        Op::Relu(a) => {
            let mut d = g.clone();
            Zip::from(&mut d)
                .and(val(a))
                .for_each(|d, &x| if x <= zero { *d = zero });
            acc(grads, *a, d);
        }
        Op::Elu(a) => {
            let mut d = g.clone();
            Zip::from(&mut d).and(val(a)).and(out).for_each(|d, &x, &y| {
                if x <= zero {
                    *d = *d * (y + S::one());
                }
            });
            acc(grads, *a, d);
        }
        Op::LeakyRelu(a, slope) => {
            let mut d = g.clone();
            Zip::from(&mut d).and(val(a)).for_each(|d, &x| {
                if x <= zero {
                    *d = *d * *slope;
                }
            });
            acc(grads, *a, d);
        }
        Op::Exp(a) => acc(grads, *a, g * out),
        Op::Ln(a) => acc(grads, *a, g / val(a)),
        Op::Square(a) => acc(grads, *a, g * val(a) * S::of(2.0)),
        Op::Huber(a, delta) => {
            let mut d = g.clone();
            Zip::from(&mut d).and(val(a)).for_each(|d, &r| {
                let dr = if r.abs() <= *delta { r } else { *delta * r.signum() };
                *d = *d * dr;
            });
            acc(grads, *a, d);
        }
        Op::SumAll(a) => {
            acc(grads, *a, Array2::from_elem(val(a).dim(), g[[0, 0]]));
        }
        Op::MeanAll(a) => {
            let n = S::of(val(a).len() as f64);
            acc(grads, *a, Array2::from_elem(val(a).dim(), g[[0, 0]] / n));
        }
        Op::MeanRows(a) => {
            let (r, c) = val(a).dim();
            let n = S::of(r as f64);
            let row = g / n;
            acc(grads, *a, row.broadcast((r, c)).expect("broadcast").to_owned());
        }
        Op::SumCols(a) => {
            let dim = val(a).dim();
            acc(grads, *a, g.broadcast(dim).expect("broadcast").to_owned());
        }
        Op::Reshape(a) => {
            let flat: Vec<S> = g.iter().copied().collect();
            let d = Array2::from_shape_vec(val(a).dim(), flat).expect("reshape back");
            acc(grads, *a, d);
        }
        Op::SwapOuter(a, outer, inner) => {
            acc(grads, *a, swap_outer_array(g, *inner, *outer));
        }
        Op::Transpose(a) => acc(grads, *a, g.t().to_owned()),
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for p in parts {
                let w = val(p).ncols();
                acc(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                start += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut start = 0;
            for p in parts {
                let h = val(p).nrows();
                acc(grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                start += h;
            }
        }
        Op::SliceCols(a, start) => {
            let mut d = Array2::zeros(val(a).dim());
            d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
            acc(grads, *a, d);
        }
        Op::SliceRows(a, start) => {
            let mut d = Array2::zeros(val(a).dim());
            d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
            acc(grads, *a, d);
        }
        Op::GatherRows(a, idx) => {
            let mut d: Array2<S> = Array2::zeros(val(a).dim());
            for (k, &r) in idx.iter().enumerate() {
                let mut row = d.row_mut(r);
                row += &g.row(k);
            }
            acc(grads, *a, d);
        }
        Op::Scatter(v, pos) => {
            let mut d = Array2::zeros((pos.len(), 1));
            for (k, &(i, j)) in pos.iter().enumerate() {
                d[[k, 0]] = g[[i, j]];
            }
            acc(grads, *v, d);
        }
        Op::OuterAdd(c, r) => {
            acc(grads, *c, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
            acc(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        Op::SoftmaxRows(a) => {
            // dl = y * (g - <g, y>)
            let dot = (g * out).sum_axis(Axis(1)).insert_axis(Axis(1));
            let d = out * &(g - &dot);
            acc(grads, *a, d);
        }
        Op::WeightedSoftmaxRows(l, w) => {
            let dot = (g * out).sum_axis(Axis(1)).insert_axis(Axis(1));
            let centered = g - &dot;
            acc(grads, *l, out * &centered);
            let (q, z) = weighted_exp(val(l), val(w));
            let mut dw = q * &centered;
            for (mut row, zi) in dw.rows_mut().into_iter().zip(z.iter()) {
                row.mapv_inplace(|v| v / *zi);
            }
            acc(grads, *w, dw);
        }
        Op::LogSumExpRows(a, mask) => {
            let (p, _) = masked_lse(val(a), mask);
            acc(grads, *a, p * g);
        }
        Op::RowNormalize(a) => {
            let x = val(a);
            let mut d = Array2::zeros(x.dim());
            for (r, mut drow) in d.rows_mut().into_iter().enumerate() {
                let xr = x.row(r);
                let yr = out.row(r);
                let gr = g.row(r);
                let n = xr.dot(&xr).sqrt();
                let gy = gr.dot(&yr);
                Zip::from(&mut drow)
                    .and(&gr)
                    .and(&yr)
                    .for_each(|d, &gv, &yv| *d = (gv - gy * yv) / n);
            }
            acc(grads, *a, d);
        }
        Op::StraightThrough(soft) => acc(grads, *soft, g.clone()),
    }
}

pub(crate) fn swap_outer_array<S: Scalar>(x: &Array2<S>, outer: usize, inner: usize) -> Array2<S> {
    assert_eq!(x.nrows(), outer * inner, "swap_outer rows");
    let mut out = Array2::zeros(x.dim());
    for o in 0..outer {
        for i in 0..inner {
            out.row_mut(i * outer + o).assign(&x.row(o * inner + i));
        }
    }
    out
}

pub(crate) fn softmax_rows_array<S: Scalar>(x: &Array2<S>) -> Array2<S> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(S::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// `q = exp(l - m)` with `m` the row max over positively weighted entries,
/// and `z = sum_j w q`. Exponents of zero-weight entries are clamped to keep
/// their (weight) gradients finite.
fn weighted_exp<S: Scalar>(l: &Array2<S>, w: &Array2<S>) -> (Array2<S>, Vec<S>) {
    let cap = S::of(60.0);
    let mut q = Array2::zeros(l.dim());
    let mut z = Vec::with_capacity(l.nrows());
    for r in 0..l.nrows() {
        let lr = l.row(r);
        let wr = w.row(r);
        let mut m = S::neg_infinity();
        for (&lv, &wv) in lr.iter().zip(wr.iter()) {
            if wv > S::zero() && lv > m {
                m = lv;
            }
        }
        if m == S::neg_infinity() {
            m = lr.fold(S::neg_infinity(), |a, &b| a.max(b));
        }
        let mut zr = S::zero();
        for c in 0..l.ncols() {
            let e = (lr[c] - m).min(cap).exp();
            q[[r, c]] = e;
            zr = zr + wr[c] * e;
        }
        z.push(zr);
    }
    (q, z)
}

/// Masked softmax probabilities and per-row log-sum-exp.
fn masked_lse<S: Scalar>(x: &Array2<S>, mask: &Array2<S>) -> (Array2<S>, ndarray::Array1<S>) {
    let mut p = Array2::zeros(x.dim());
    let mut lse = ndarray::Array1::zeros(x.nrows());
    for r in 0..x.nrows() {
        let mut m = S::neg_infinity();
        for c in 0..x.ncols() {
            if mask[[r, c]] > S::zero() && x[[r, c]] > m {
                m = x[[r, c]];
            }
        }
        let mut z = S::zero();
        for c in 0..x.ncols() {
            if mask[[r, c]] > S::zero() {
                let e = mask[[r, c]] * (x[[r, c]] - m).exp();
                p[[r, c]] = e;
                z = z + e;
            }
        }
        p.row_mut(r).mapv_inplace(|v| v / z);
        lse[r] = m + z.ln();
    }
    (p, lse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_grad, rand_array};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn matmul_and_bias_values() {
        let t = Tape::<f64>::new();
        let x = t.leaf(array![[1.0, 2.0]]);
        let w = t.leaf(array![[1.0, 0.0], [0.0, 3.0]]);
        let b = t.leaf(array![[0.5, -1.0]]);
        let y = t.add_row(t.matmul(x, w), b);
        assert_eq!(*t.value(y), array![[1.5, 5.0]]);
    }

    #[test]
    fn swap_outer_is_an_involution() {
        let x = rand_array(6, 2, 3);
        let y = swap_outer_array(&x, 2, 3);
        assert_eq!(y.row(1), x.row(3));
        assert_eq!(swap_outer_array(&y, 3, 2), x);
    }

    #[test]
    fn weighted_softmax_masks_zero_weights() {
        let t = Tape::<f64>::new();
        let l = t.leaf(array![[1.0, 50.0, 0.0]]);
        let w = t.leaf(array![[1.0, 0.0, 1.0]]);
        let p = t.weighted_softmax_rows(l, w);
        let v = t.value(p);
        assert_abs_diff_eq!(v[[0, 1]], 0.0);
        assert_abs_diff_eq!(v.sum(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[0, 0]], 1.0_f64.exp() / (1.0_f64.exp() + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn gradients_of_elementwise_ops() {
        let x0 = rand_array(3, 4, 1);
        check_grad(&[x0.clone()], |t, v| {
            let a = t.elu(v[0]);
            let b = t.leaky_relu(v[0], 0.2);
            let c = t.huber(v[0], 0.7);
            let d = t.exp(t.scale(v[0], 0.3));
            let e = t.square(t.mul(a, b));
            let f = t.ln(t.add_scalar(t.square(v[0]), 1.0));
            let all = t.concat_cols(&[a, b, c, d, e, f]);
            t.sum(t.square(all))
        });
    }

    #[test]
    fn gradients_of_structural_ops() {
        let x0 = rand_array(6, 3, 2);
        let r0 = rand_array(1, 3, 3);
        let c0 = rand_array(6, 1, 4);
        check_grad(&[x0, r0, c0], |t, v| {
            let a = t.swap_outer(v[0], 2, 3);
            let b = t.reshape(a, 3, 6);
            let c = t.transpose(b);
            let d = t.add_row(c, t.slice_cols(t.concat_cols(&[v[1], v[1]]), 1, 3));
            let e = t.mul_col(d, v[2]);
            let f = t.gather_rows(e, &[0, 0, 5, 2]);
            let g = t.concat_rows(&[f, t.slice_rows(e, 1, 2)]);
            let h = t.outer_add(t.sum_cols(g), t.mean_rows(g));
            let k = t.matmul(h, t.transpose(h));
            t.mean(t.square(k))
        });
    }

    #[test]
    fn gradients_of_softmax_family() {
        let l0 = rand_array(4, 5, 5);
        let w0 = rand_array(4, 5, 6).mapv(|v| v.abs() + 0.1);
        let mask = Array2::from_shape_fn((4, 5), |(i, j)| if (i + j) % 3 == 0 { 0.0 } else { 1.0 });
        check_grad(&[l0, w0], |t, v| {
            let a = t.softmax_rows(v[0]);
            let b = t.weighted_softmax_rows(v[0], v[1]);
            let c = t.logsumexp_rows(v[0], mask.clone());
            let d = t.row_normalize(v[0]);
            let target = t.leaf(rand_array(4, 5, 9));
            let s1 = t.sum(t.mul(t.add(a, b), target));
            let s2 = t.sum(t.square(c));
            let s3 = t.sum(t.mul(d, target));
            t.add(t.add(s1, s2), s3)
        });
    }

    #[test]
    fn scatter_gradient() {
        let v0 = rand_array(3, 1, 7);
        check_grad(&[v0], |t, v| {
            let m = t.scatter(v[0], &[(0, 1), (1, 0), (2, 2)], 3, 3);
            let w = t.leaf(rand_array(3, 3, 8));
            t.sum(t.square(t.matmul(m, w)))
        });
    }

    #[test]
    fn straight_through_passes_gradient() {
        let t = Tape::<f64>::new();
        let soft = t.leaf(array![[0.2, 0.8]]);
        let hard = t.straight_through(soft, array![[0.0, 1.0]]);
        let w = t.leaf(array![[2.0, 3.0]]);
        let y = t.sum(t.mul(hard, w));
        assert_eq!(t.scalar(y), 3.0);
        let g = t.backward(y);
        assert_eq!(g.get(soft).unwrap(), &array![[2.0, 3.0]]);
    }
}
