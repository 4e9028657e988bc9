use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Array2<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<S>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Uniform fan-in initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, scaled by `gain`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> ParamId {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_fn(shape, |_| S::of(rng.random_range(-bound..=bound)));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: (usize, usize)) -> ParamId {
        self.add(name, Array2::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Array2<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<S>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Overwrite every value from another store with the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match model ({})",
                other.len(),
                self.len()
            )));
        }
        for (id, name, value) in other.iter() {
            let own = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if self.values[own.0].dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match model {:?}",
                    value.dim(),
                    self.values[own.0].dim()
                )));
            }
            let _ = id;
            self.values[own.0].assign(value);
        }
        Ok(())
    }
}

/// Dense per-parameter gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GradBuffer<S> {
    pub grads: Vec<Array2<S>>,
}

impl<S: Scalar> GradBuffer<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Self {
            grads: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn add(&mut self, id: ParamId, g: &Array2<S>) {
        self.grads[id.0] += g;
    }

    pub fn merge(&mut self, other: &GradBuffer<S>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| {
                let f = v.as_f64();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: S) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Adaptive-moment optimiser state.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<S>>,
    v: Vec<Array2<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
            v: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &GradBuffer<S>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let c1 = S::of(1.0 - self.beta1.powi(self.step));
        let c2 = S::of(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (S::of(lr), S::of(self.eps));
        let one = S::one();
        for (k, value) in store.values.iter_mut().enumerate() {
            let g = &grads.grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p = *p - lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(&store, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let mut g = GradBuffer::zeros_like(&store);
            let grad = store.value(id) * 2.0;
            g.add(id, &grad);
            opt.step(&mut store, &g, 0.01);
        }
        assert!(store.value(id).iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn load_from_rejects_shape_mismatch() {
        let mut a = ParamStore::<f64>::new();
        a.add_zeros("w", (2, 2));
        let mut b = ParamStore::<f64>::new();
        b.add_zeros("w", (2, 3));
        assert!(a.load_from(&b).is_err());
    }
}
