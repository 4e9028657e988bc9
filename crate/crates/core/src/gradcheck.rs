//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it checks.

use ndarray::Array2;

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Norm-wise relative error `|g_a - g_n| / max(|g_a|, |g_n|, floor)` per input.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub const DEFAULT_STEP: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-10;

/// Norm-wise relative error between two gradient arrays.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let na = analytic.mapv(|v| v * v).sum().sqrt();
    let nn = numeric.mapv(|v| v * v).sum().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

/// Compare reverse-mode gradients of `f` against central differences on every input entry.
pub fn check_gradients<F>(inputs: &[Array2<f64>], f: F) -> GradCheck
where
    F: Fn(&Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Array2<f64>]| -> f64 {
        let t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let out = f(&t, &vars);
        t.scalar(out)
    };

    let t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.leaf(v.clone())).collect();
    let out = f(&t, &vars);
    let grads = t.backward(out);

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.dim());
        let mut numeric = Array2::zeros(input.dim());
        for idx in ndarray::indices(input.dim()) {
            let idx = [idx.0, idx.1];
            let x = input[idx];
            let h = DEFAULT_STEP * x.abs().max(1.0);
            work[k][idx] = x + h;
            let fp = eval(&work);
            work[k][idx] = x - h;
            let fm = eval(&work);
            work[k][idx] = x;
            numeric[idx] = (fp - fm) / (2.0 * h);
        }
        per_input.push(relative_error(&analytic, &numeric));
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    GradCheck {
        per_input,
        max_rel_error,
    }
}

/// Per-parameter result of [`check_param_gradients`].
#[derive(Debug, Clone)]
pub struct ParamGradCheck {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl ParamGradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Gradient norms below this are compared in absolute terms; deep attention
/// parameters often have gradients near the finite-difference round-off.
const PARAM_NORM_FLOOR: f64 = 1e-4;

/// Check gradients of `f` with respect to stored parameters.
///
/// At most `max_entries` evenly spaced entries of each parameter are
/// perturbed; the relative error is norm-wise over those entries.
pub fn check_param_gradients<F>(store: &ParamStore<f64>, max_entries: usize, f: F) -> ParamGradCheck
where
    F: Fn(&Tape<f64>, &ParamStore<f64>) -> Var,
{
    let t = Tape::new();
    let out = f(&t, store);
    let grads = t.backward(out);
    let analytic: Vec<(ParamId, Array2<f64>)> = grads
        .param_grads()
        .into_iter()
        .map(|(id, g)| (id, g.clone()))
        .collect();
    let eval = |s: &ParamStore<f64>| {
        let t = Tape::new();
        let out = f(&t, s);
        t.scalar(out)
    };
    let mut work = store.clone();
    let mut per_param = Vec::new();
    for (id, name, value) in store.iter() {
        let g = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Array2::zeros(value.dim()));
        let n = value.len();
        let picks = max_entries.min(n).max(1);
        let mut a = Array2::zeros((picks, 1));
        let mut num = Array2::zeros((picks, 1));
        for k in 0..picks {
            let flat = k * n / picks;
            let idx = [flat / value.ncols(), flat % value.ncols()];
            let x = value[idx];
            let h = DEFAULT_STEP * x.abs().max(1.0);
            work.value_mut(id)[idx] = x + h;
            let fp = eval(&work);
            work.value_mut(id)[idx] = x - h;
            let fm = eval(&work);
            work.value_mut(id)[idx] = x;
            a[[k, 0]] = g[idx];
            num[[k, 0]] = (fp - fm) / (2.0 * h);
        }
        let diff = (&a - &num).mapv(|v| v * v).sum().sqrt();
        let scale = a.mapv(|v| v * v).sum().sqrt().max(num.mapv(|v| v * v).sum().sqrt());
        per_param.push((name.to_string(), diff / scale.max(PARAM_NORM_FLOOR)));
    }
    let max_rel_error = per_param.iter().map(|p| p.1).fold(0.0, f64::max);
    ParamGradCheck {
        per_param,
        max_rel_error,
    }
}
