//! Prediction, contrastive and joint losses.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{LossConfig, Task};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

fn check_pair<S: Scalar>(context: &'static str, z: &Array2<S>, zp: &Array2<S>) -> Result<()> {
    if z.dim() != zp.dim() {
        return Err(shape_err(context, format!("{:?}", z.dim()), format!("{:?}", zp.dim())));
    }
    Ok(())
}

fn check_contrastive<S: Scalar>(z: &Array2<S>, zp: &Array2<S>) -> Result<()> {
    check_pair("contrastive views", z, zp)?;
    if z.nrows() < 2 {
        return Err(Error::Invalid(format!(
            "contrastive loss needs at least 2 samples for negatives, got {}",
            z.nrows()
        )));
    }
    for (name, m) in [("first", z), ("second", zp)] {
        if let Some(i) = m.rows().into_iter().position(|r| r.iter().all(|v| *v == S::zero())) {
            return Err(Error::Invalid(format!("row {i} of the {name} view is zero; cosine similarity undefined")));
        }
    }
    Ok(())
}

/// Symmetric cosine InfoNCE on a tape.
///
/// Row `i` of `z` and `zp` form the positive pair; the other rows of the
/// opposite view are negatives. Without `include_positive` the positive pair
/// is left out of the denominator.
pub fn contrastive_tape<S: Scalar>(t: &Tape<S>, z: Var, zp: Var, tau: f64, include_positive: bool) -> Var {
    let b = t.shape(z).0;
    let sim = t.scale(
        t.matmul(t.row_normalize(z), t.transpose(t.row_normalize(zp))),
        S::of(1.0 / tau),
    );
    let eye: Array2<S> = Array2::eye(b);
    let mask = if include_positive {
        Array2::ones((b, b))
    } else {
        Array2::ones((b, b)) - &eye
    };
    let pos = t.sum(t.mul(sim, t.leaf(eye)));
    let lse = t.add(
        t.sum(t.logsumexp_rows(sim, mask.clone())),
        t.sum(t.logsumexp_rows(t.transpose(sim), mask)),
    );
    t.scale(t.sub(lse, t.scale(pos, S::of(2.0))), S::of(1.0 / b as f64))
}

/// Symmetric cosine InfoNCE, summed over both directions and averaged over the batch.
pub fn contrastive_loss<S: Scalar>(z: &Array2<S>, zp: &Array2<S>, tau: f64, include_positive: bool) -> Result<f64> {
    check_contrastive(z, zp)?;
    if !(tau > 0.0) {
        return Err(Error::Invalid("contrastive temperature must be positive".into()));
    }
    let t = Tape::new();
    let out = contrastive_tape(&t, t.leaf(z.clone()), t.leaf(zp.clone()), tau, include_positive);
    Ok(t.scalar(out).as_f64())
}

/// Value and gradients of the contrastive loss with respect to both views.
pub fn contrastive_with_grad<S: Scalar>(
    z: &Array2<S>,
    zp: &Array2<S>,
    tau: f64,
    include_positive: bool,
) -> Result<(f64, Array2<S>, Array2<S>)> {
    check_contrastive(z, zp)?;
    let t = Tape::new();
    let (zv, zpv) = (t.leaf(z.clone()), t.leaf(zp.clone()));
    let out = contrastive_tape(&t, zv, zpv, tau, include_positive);
    let g = t.backward(out);
    Ok((
        t.scalar(out).as_f64(),
        g.get_or_zeros(zv, z.dim()),
        g.get_or_zeros(zpv, zp.dim()),
    ))
}

/// Mean elementwise Huber penalty of `y - y_hat`.
pub fn huber_loss<S: Scalar>(y: &Array2<S>, y_hat: &Array2<S>, delta: f64) -> Result<f64> {
    check_pair("huber loss", y, y_hat)?;
    let n = y.len().max(1) as f64;
    let s: f64 = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| {
            let r = (a.as_f64() - b.as_f64()).abs();
            if r <= delta {
                0.5 * r * r
            } else {
                delta * (r - 0.5 * delta)
            }
        })
        .sum();
    Ok(s / n)
}

/// Mean squared error.
pub fn squared_error_loss<S: Scalar>(y: &Array2<S>, y_hat: &Array2<S>) -> Result<f64> {
    check_pair("squared error loss", y, y_hat)?;
    let n = y.len().max(1) as f64;
    Ok(y.iter().zip(y_hat.iter()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n)
}

/// Task loss on a tape: Huber for traffic, squared error for crime.
pub fn task_loss_tape<S: Scalar>(t: &Tape<S>, y: Var, y_hat: Var, cfg: &LossConfig) -> Var {
    let r = t.sub(y, y_hat);
    match cfg.task {
        Task::Traffic => t.mean(t.huber(r, S::of(cfg.delta))),
        Task::Crime => t.mean(t.square(r)),
    }
}

fn task_loss<S: Scalar>(y: &Array2<S>, y_hat: &Array2<S>, cfg: &LossConfig) -> Result<f64> {
    match cfg.task {
        Task::Traffic => huber_loss(y, y_hat, cfg.delta),
        Task::Crime => squared_error_loss(y, y_hat),
    }
}

/// `l(Y, Y_hat) + l(Y, Y_hat')`; the second term is dropped without an augmented branch.
pub fn prediction_loss<S: Scalar>(
    y: &Array2<S>,
    y_hat: &Array2<S>,
    y_hat_aug: Option<&Array2<S>>,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut total = task_loss(y, y_hat, cfg)?;
    if let Some(a) = y_hat_aug {
        total += task_loss(y, a, cfg)?;
    }
    Ok(total)
}

/// Components of the training objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub prediction: f64,
    pub contrastive: f64,
    pub kl_spatial: f64,
    pub kl_temporal: f64,
}

impl LossParts {
    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("prediction", self.prediction),
            ("contrastive", self.contrastive),
            ("kl_spatial", self.kl_spatial),
            ("kl_temporal", self.kl_temporal),
        ]
    }

    /// Error naming the first non-finite component.
    pub fn check_finite(&self) -> Result<()> {
        match self.named().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite(format!("{name} loss ({v})"))),
            None => Ok(()),
        }
    }
}

/// `prediction + l1 * contrastive + l2 * kl_spatial + l3 * kl_temporal`.
pub fn joint_loss(parts: &LossParts, lambdas: [f64; 3]) -> Result<f64> {
    parts.check_finite()?;
    Ok(parts.prediction
        + lambdas[0] * parts.contrastive
        + lambdas[1] * parts.kl_spatial
        + lambdas[2] * parts.kl_temporal)
}
