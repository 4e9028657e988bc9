//! Two-branch training loop.
//!
//! Each batch runs in three phases:
//! 1. every sample builds its own tape (in parallel) for the original branch,
//!    the augmented branch and the generator KL terms;
//! 2. the batch projections meet in a separate contrastive tape;
//! 3. every sample tape is backpropagated with seeds carrying the loss
//!    weights and the contrastive gradient of its projections.
//!
//! Per-sample gradients are summed in sample order, so results do not depend
//! on the thread count.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::PreparedData;
use super::loss::{contrastive_with_grad, task_loss_tape, LossParts};
use crate::config::{lr_at, AnnealSchedule, LossConfig, TrainConfig};
use crate::data::SplitPart;
use crate::error::{Error, Result};
use crate::generator::LatentMode;
use crate::graph::StgSample;
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::{AugMode, Cl4st, GraphContext, ModelSpec, SampleNoise};
use crate::params::{Adam, GradBuffer, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Loss values and summed parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchOutput<S> {
    /// Batch means of each component.
    pub parts: LossParts,
    pub joint: f64,
    /// Mean task loss of the original branch alone.
    pub prediction_original: f64,
    /// Mean task loss of the augmented branch alone (0 without one).
    pub prediction_augmented: f64,
    pub grads: GradBuffer<S>,
}

struct SampleTape<S: Scalar> {
    tape: Tape<S>,
    pred_original: Var,
    pred_augmented: Option<Var>,
    z: Var,
    z_aug: Option<Var>,
    kl_spatial: Option<Var>,
    kl_temporal: Option<Var>,
}

fn forward_sample<S: Scalar>(
    model: &Cl4st,
    store: &ParamStore<S>,
    ctx: &GraphContext<S>,
    loss: &LossConfig,
    sample: &StgSample<S>,
    noise: &SampleNoise<S>,
    mode: AugMode,
) -> SampleTape<S> {
    let t = Tape::new();
    let x = t.leaf(Cl4st::input_matrix(sample));
    let y = t.leaf(sample.y.to_matrix());
    let pos = model.position_of(sample);
    let orig = model.original_branch(&t, store, ctx, x, pos, noise.dropout_original.as_ref());
    let pred_original = task_loss_tape(&t, y, orig.y_hat, loss);
    let (mut pred_augmented, mut z_aug, mut kl_spatial, mut kl_temporal) = (None, None, None, None);
    if let Some(aug) = model.augment(&t, store, ctx, x, noise, mode) {
        let b = model.branch(
            &t,
            store,
            aug.x,
            aug.spatial_support,
            aug.temporal_support,
            pos,
            noise.dropout_augmented.as_ref(),
        );
        pred_augmented = Some(task_loss_tape(&t, y, b.y_hat, loss));
        z_aug = Some(b.z);
        kl_spatial = aug.kl_spatial;
        kl_temporal = aug.kl_temporal;
    }
    SampleTape {
        tape: t,
        pred_original,
        pred_augmented,
        z: orig.z,
        z_aug,
        kl_spatial,
        kl_temporal,
    }
}

fn stack_rows<S: Scalar>(rows: &[Array2<S>]) -> Array2<S> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
}

/// Joint loss and its gradient for one batch.
///
/// `noise` holds the pre-drawn randomness of each sample; with it fixed the
/// objective is a deterministic function of the parameters.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective<S: Scalar>(
    model: &Cl4st,
    store: &ParamStore<S>,
    ctx: &GraphContext<S>,
    loss: &LossConfig,
    samples: &[StgSample<S>],
    noise: &[SampleNoise<S>],
    lambdas: [f64; 3],
    mode: AugMode,
) -> Result<BatchOutput<S>> {
    if samples.is_empty() || samples.len() != noise.len() {
        return Err(Error::Invalid(format!(
            "batch of {} samples with {} noise draws",
            samples.len(),
            noise.len()
        )));
    }
    for s in samples {
        model.check_sample(s)?;
    }
    let b = samples.len();
    let tapes: Vec<SampleTape<S>> = samples
        .par_iter()
        .zip(noise.par_iter())
        .map(|(s, n)| forward_sample(model, store, ctx, loss, s, n, mode))
        .collect();

    let scalar = |st: &SampleTape<S>, v: Option<Var>| v.map_or(0.0, |v| st.tape.scalar(v).as_f64());
    let mean = |f: &dyn Fn(&SampleTape<S>) -> f64| tapes.iter().map(f).sum::<f64>() / b as f64;
    let prediction_original = mean(&|st| scalar(st, Some(st.pred_original)));
    let prediction_augmented = mean(&|st| scalar(st, st.pred_augmented));
    let kl_spatial = mean(&|st| scalar(st, st.kl_spatial));
    let kl_temporal = mean(&|st| scalar(st, st.kl_temporal));

    let augmented = tapes[0].z_aug.is_some();
    let (contrastive, dz, dz_aug) = if augmented {
        let z: Vec<Array2<S>> = tapes.iter().map(|st| st.tape.value(st.z).clone()).collect();
        let za: Vec<Array2<S>> = tapes
            .iter()
            .map(|st| st.tape.value(st.z_aug.expect("augmented")).clone())
            .collect();
        let (l, gz, gza) = contrastive_with_grad(
            &stack_rows(&z),
            &stack_rows(&za),
            loss.tau_cl,
            loss.include_positive_in_denominator,
        )?;
        (l, Some(gz), Some(gza))
    } else {
        (0.0, None, None)
    };

    let parts = LossParts {
        prediction: prediction_original + prediction_augmented,
        contrastive,
        kl_spatial,
        kl_temporal,
    };
    let joint = super::loss::joint_loss(&parts, lambdas)?;

    let inv_b = 1.0 / b as f64;
    let per_sample: Vec<GradBuffer<S>> = tapes
        .into_par_iter()
        .enumerate()
        .map(|(i, st)| {
            let one = |c: f64| Array2::from_elem((1, 1), S::of(c));
            let mut seeds = vec![(st.pred_original, one(inv_b))];
            if let Some(p) = st.pred_augmented {
                seeds.push((p, one(inv_b)));
            }
            if let Some(k) = st.kl_spatial {
                seeds.push((k, one(lambdas[1] * inv_b)));
            }
            if let Some(k) = st.kl_temporal {
                seeds.push((k, one(lambdas[2] * inv_b)));
            }
            if let (Some(gz), Some(gza), Some(za)) = (&dz, &dz_aug, st.z_aug) {
                let l1 = S::of(lambdas[0]);
                seeds.push((st.z, gz.row(i).insert_axis(ndarray::Axis(0)).mapv(|v| v * l1)));
                seeds.push((za, gza.row(i).insert_axis(ndarray::Axis(0)).mapv(|v| v * l1)));
            }
            let g = st.tape.backward_seeded(&seeds);
            let mut buf = GradBuffer::zeros_like(store);
            for (id, grad) in g.param_grads() {
                buf.add(id, grad);
            }
            buf
        })
        .collect();
    let mut grads = GradBuffer::zeros_like(store);
    for g in &per_sample {
        grads.merge(g);
    }
    Ok(BatchOutput {
        parts,
        joint,
        prediction_original,
        prediction_augmented,
        grads,
    })
}

/// One line of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: Option<f64>,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
    pub prediction: f64,
    pub contrastive: f64,
    pub kl_spatial: f64,
    pub kl_temporal: f64,
    pub batches: usize,
}

/// Means over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub parts: LossParts,
    pub batches: usize,
    pub lr: f64,
    pub lambdas: [f64; 3],
    pub tau: f64,
}

/// Error metrics and mean normalised task loss on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub density_classes: bool,
}

/// Outcome of [`Trainer::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
}

/// Model, parameters and optimiser state, plus the sampling stream.
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    pub model: Cl4st,
    pub store: ParamStore<S>,
    pub adam: Adam<S>,
    pub loss: LossConfig,
    pub anneal: AnnealSchedule,
    pub train: TrainConfig,
    rng: ChaCha8Rng,
}

/// Evaluation runs this many windows per parallel chunk.
const EVAL_CHUNK: usize = 256;

impl<S: Scalar> Trainer<S> {
    /// Fresh parameters seeded from `train.seed`.
    pub fn new(spec: ModelSpec, loss: LossConfig, anneal: AnnealSchedule, train: TrainConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = Cl4st::new(spec, &mut store, &mut ChaCha8Rng::seed_from_u64(train.seed))?;
        Self::from_parts(model, store, loss, anneal, train)
    }

    pub fn from_parts(
        model: Cl4st,
        store: ParamStore<S>,
        loss: LossConfig,
        anneal: AnnealSchedule,
        train: TrainConfig,
    ) -> Result<Self> {
        loss.validate()?;
        train.validate(model.has_augmented_branch())?;
        let adam = Adam::new(&store, train.adam_beta1, train.adam_beta2, train.adam_eps);
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            store,
            adam,
            loss,
            anneal,
            train,
            rng,
        })
    }

    /// Loss weights at `epoch`; all zero without an augmented branch.
    pub fn lambdas(&self, epoch: usize) -> [f64; 3] {
        if self.model.has_augmented_branch() {
            self.anneal.lambdas(epoch, self.train.max_epochs)
        } else {
            [0.0; 3]
        }
    }

    fn aug_mode(&self, epoch: usize) -> AugMode {
        let g = &self.model.spec.generator;
        AugMode::Sampled {
            tau: g.tau_at(epoch),
            hard: g.hard,
        }
    }

    /// Draw noise for `samples` and take one optimiser step on them.
    pub fn step(
        &mut self,
        ctx: &GraphContext<S>,
        samples: &[StgSample<S>],
        epoch: usize,
        lambdas: [f64; 3],
        mode: AugMode,
    ) -> Result<BatchOutput<S>> {
        let noise: Vec<SampleNoise<S>> = samples
            .iter()
            .map(|_| self.model.sample_noise(ctx, &mut self.rng, LatentMode::Sample, true))
            .collect();
        let mut out = batch_objective(&self.model, &self.store, ctx, &self.loss, samples, &noise, lambdas, mode)
            .map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
            })?;
        if !out.joint.is_finite() || !out.grads.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("non-finite loss or gradient (joint loss {})", out.joint),
            });
        }
        if let Some(c) = self.train.grad_clip {
            let norm = out.grads.global_norm();
            if norm > c {
                out.grads.scale(S::of(c / norm));
            }
        }
        self.adam.step(&mut self.store, &out.grads, lr_at(epoch, &self.train));
        Ok(out)
    }

    /// One pass over the shuffled training windows.
    pub fn train_epoch(&mut self, data: &PreparedData<S>, epoch: usize) -> Result<EpochStats> {
        let mut order: Vec<usize> = data.range(SplitPart::Train).collect();
        order.shuffle(&mut self.rng);
        let lambdas = self.lambdas(epoch);
        let mode = self.aug_mode(epoch);
        let min_batch = if self.model.has_augmented_branch() { 2 } else { 1 };
        let mut parts = LossParts::default();
        let (mut loss, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(self.train.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            if self.train.max_batches_per_epoch.is_some_and(|m| batches >= m) {
                break;
            }
            let samples = chunk.iter().map(|&k| data.sample(k)).collect::<Result<Vec<_>>>()?;
            let out = self.step(&data.ctx, &samples, epoch, lambdas, mode)?;
            loss += out.joint;
            parts.prediction += out.parts.prediction;
            parts.contrastive += out.parts.contrastive;
            parts.kl_spatial += out.parts.kl_spatial;
            parts.kl_temporal += out.parts.kl_temporal;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Invalid("training split yields no batch".into()));
        }
        let n = batches as f64;
        Ok(EpochStats {
            loss: loss / n,
            parts: LossParts {
                prediction: parts.prediction / n,
                contrastive: parts.contrastive / n,
                kl_spatial: parts.kl_spatial / n,
                kl_temporal: parts.kl_temporal / n,
            },
            batches,
            lr: lr_at(epoch, &self.train),
            lambdas,
            tau: self.model.spec.generator.tau_at(epoch),
        })
    }

    /// Original-branch metrics in raw units on one split.
    pub fn evaluate(&self, data: &PreparedData<S>, part: SplitPart, opts: EvalOptions) -> Result<Evaluation> {
        evaluate_store(&self.model, &self.store, &self.loss, data, part, opts)
    }

    /// Train up to `max_epochs`, keeping the parameters with the lowest
    /// validation MAE and stopping after `patience` epochs without improvement.
    /// On return `self.store` holds the best parameters.
    pub fn fit<F>(&mut self, data: &PreparedData<S>, mut on_epoch: F) -> Result<FitSummary>
    where
        F: FnMut(&EpochRecord, &Self) -> Result<()>,
    {
        let mut best: Option<(usize, f64, ParamStore<S>)> = None;
        let mut since_best = 0;
        let mut epochs_run = 0;
        let mut stopped_early = false;
        for epoch in 0..self.train.max_epochs {
            let stats = self.train_epoch(data, epoch)?;
            let val = self.evaluate(data, SplitPart::Val, EvalOptions::default())?;
            epochs_run += 1;
            let record = EpochRecord {
                epoch,
                train_loss: stats.loss,
                val_loss: val.loss,
                val_mae: val.metrics.mae,
                val_rmse: val.metrics.rmse,
                val_mape: val.metrics.mape_percent,
                lr: stats.lr,
                lambda1: stats.lambdas[0],
                lambda2: stats.lambdas[1],
                lambda3: stats.lambdas[2],
                tau: stats.tau,
                prediction: stats.parts.prediction,
                contrastive: stats.parts.contrastive,
                kl_spatial: stats.parts.kl_spatial,
                kl_temporal: stats.parts.kl_temporal,
                batches: stats.batches,
            };
            let improved = best.as_ref().is_none_or(|(_, mae, _)| val.metrics.mae < *mae);
            if improved {
                best = Some((epoch, val.metrics.mae, self.store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            on_epoch(&record, self)?;
            if since_best >= self.train.patience {
                stopped_early = true;
                break;
            }
        }
        let (best_epoch, best_val_mae, store) = best.expect("at least one epoch");
        self.store = store;
        Ok(FitSummary {
            epochs_run,
            best_epoch,
            best_val_mae,
            stopped_early,
        })
    }
}

/// Evaluate any parameter set; windows run in parallel, metrics accumulate in order.
pub fn evaluate_store<S: Scalar>(
    model: &Cl4st,
    store: &ParamStore<S>,
    loss: &LossConfig,
    data: &PreparedData<S>,
    part: SplitPart,
    opts: EvalOptions,
) -> Result<Evaluation> {
    let range = data.range(part);
    if range.is_empty() {
        return Err(Error::Invalid(format!("{part:?} split is empty")));
    }
    let (h, n) = (data.windows.t_out, data.nodes());
    let mut acc = MetricsAccumulator::new(h);
    if opts.density_classes {
        acc = acc.with_density_classes(data.density.clone());
    }
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = range.collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let preds = chunk
            .par_iter()
            .map(|&k| -> Result<(f64, ndarray::Array3<f64>)> {
                let s = data.sample(k)?;
                let y_hat = model.predict(store, &data.ctx, &s)?;
                let t = Tape::new();
                let l = task_loss_tape(&t, t.leaf(s.y.to_matrix()), t.leaf(y_hat.clone()), loss);
                let raw = data.stats.invert_matrix(&y_hat)?;
                let f = raw.ncols();
                let arr = ndarray::Array3::from_shape_vec((h, n, f), raw.iter().map(|v| v.as_f64()).collect())
                    .map_err(|e| Error::Invalid(e.to_string()))?;
                Ok((t.scalar(l).as_f64(), arr))
            })
            .collect::<Result<Vec<_>>>()?;
        for (&k, (l, y_hat)) in chunk.iter().zip(preds) {
            loss_sum += l;
            acc.add(&data.raw_target(k)?, &y_hat, None)?;
        }
    }
    Ok(Evaluation {
        metrics: acc.finish()?,
        loss: loss_sum / idx.len() as f64,
    })
}

/// Historical-average baseline metrics on one split.
pub fn historical_average_metrics<S: Scalar>(data: &PreparedData<S>, part: SplitPart) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(data.windows.t_out);
    for k in data.range(part) {
        acc.add(&data.raw_target(k)?, &data.historical_average(k)?, None)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests;
