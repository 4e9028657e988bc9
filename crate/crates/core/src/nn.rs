//! Affine layers and small MLPs, either backed by stored parameters or by
//! weight vectors produced elsewhere on the tape (hypernetwork outputs).

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Elu,
}

impl Activation {
    pub fn apply<S: Scalar>(self, t: &Tape<S>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => t.relu(x),
            Activation::Elu => t.elu(x),
        }
    }
}

/// One affine layer `x W + b` with `W: in x out` and `b: 1 x out`, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn forward<S: Scalar>(&self, t: &Tape<S>, x: Var) -> Var {
        t.add_row(t.matmul(x, self.w), self.b)
    }
}

/// Apply layers in order with `act` between consecutive layers (not after the last).
pub fn mlp_forward<S: Scalar>(t: &Tape<S>, layers: &[LinearVars], x: Var, act: Activation) -> Var {
    let mut h = x;
    for (k, layer) in layers.iter().enumerate() {
        h = layer.forward(t, h);
        if k + 1 < layers.len() {
            h = act.apply(t, h);
        }
    }
    h
}

/// Layer widths `[in, hidden.., out]` of an MLP whose weights live in one flat vector.
///
/// Flattening order, layer by layer: the `in x out` weight matrix in row-major
/// order, then the `out` bias entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub dims: Vec<usize>,
}

impl MlpShape {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Self { dims }
    }

    pub fn input(&self) -> usize {
        self.dims[0]
    }

    pub fn output(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.dims.windows(2).map(|w| (w[0], w[1]))
    }

    /// Number of scalars in the flattened parameter vector.
    pub fn numel(&self) -> usize {
        self.layer_dims().map(|(i, o)| i * o + o).sum()
    }

    /// Split a `1 x numel` tape row into per-layer weight and bias nodes.
    pub fn unflatten<S: Scalar>(&self, t: &Tape<S>, flat: Var) -> Result<Vec<LinearVars>> {
        let got = t.shape(flat);
        if got != (1, self.numel()) {
            return Err(shape_err("mlp unflatten", format!("(1, {})", self.numel()), format!("{got:?}")));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(self.dims.len() - 1);
        for (i, o) in self.layer_dims() {
            let w = t.reshape(t.slice_cols(flat, offset, i * o), i, o);
            offset += i * o;
            let b = t.slice_cols(flat, offset, o);
            offset += o;
            layers.push(LinearVars { w, b });
        }
        Ok(layers)
    }

    pub fn unflatten_values<S: Scalar>(&self, flat: &[S]) -> Result<Vec<(Array2<S>, Array2<S>)>> {
        if flat.len() != self.numel() {
            return Err(shape_err("mlp unflatten", self.numel(), flat.len()));
        }
        let mut offset = 0;
        let mut out = Vec::new();
        for (i, o) in self.layer_dims() {
            let w = Array2::from_shape_vec((i, o), flat[offset..offset + i * o].to_vec())
                .expect("sized slice");
            offset += i * o;
            let b = Array2::from_shape_vec((1, o), flat[offset..offset + o].to_vec())
                .expect("sized slice");
            offset += o;
            out.push((w, b));
        }
        Ok(out)
    }

    pub fn flatten_values<S: Scalar>(&self, layers: &[(Array2<S>, Array2<S>)]) -> Result<Vec<S>> {
        let expected: Vec<_> = self.layer_dims().collect();
        if layers.len() != expected.len() {
            return Err(shape_err("mlp flatten", expected.len(), layers.len()));
        }
        let mut flat = Vec::with_capacity(self.numel());
        for ((w, b), (i, o)) in layers.iter().zip(expected) {
            if w.dim() != (i, o) || b.dim() != (1, o) {
                return Err(shape_err(
                    "mlp flatten",
                    format!("({i}, {o}) + (1, {o})"),
                    format!("{:?} + {:?}", w.dim(), b.dim()),
                ));
            }
            flat.extend(w.iter().copied());
            flat.extend(b.iter().copied());
        }
        Ok(flat)
    }
}

/// Stored affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), (input, output), input, 1.0, rng);
        let b = store.add_uniform(format!("{name}.b"), (1, output), input, 1.0, rng);
        Self { w, b }
    }

    pub fn vars<S: Scalar>(&self, t: &Tape<S>, store: &ParamStore<S>) -> LinearVars {
        LinearVars {
            w: t.param(store, self.w),
            b: t.param(store, self.b),
        }
    }

    pub fn forward<S: Scalar>(&self, t: &Tape<S>, store: &ParamStore<S>, x: Var) -> Var {
        self.vars(t, store).forward(t, x)
    }
}

/// Stored MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        shape: &MlpShape,
        act: Activation,
    ) -> Self {
        let layers = shape
            .layer_dims()
            .enumerate()
            .map(|(k, (i, o))| Linear::new(store, rng, &format!("{name}.{k}"), i, o))
            .collect();
        Self { layers, act }
    }

    pub fn vars<S: Scalar>(&self, t: &Tape<S>, store: &ParamStore<S>) -> Vec<LinearVars> {
        self.layers.iter().map(|l| l.vars(t, store)).collect()
    }

    pub fn forward<S: Scalar>(&self, t: &Tape<S>, store: &ParamStore<S>, x: Var) -> Var {
        mlp_forward(t, &self.vars(t, store), x, self.act)
    }
}
