//! A dataset made ready for training: normalised, windowed, split, with graph constants.

use std::ops::Range;

use ndarray::Array3;

use crate::data::{
    corrupt_missing, density_bins, split_windows, Dataset, DatasetKind, DensityClass, NormalizationStats, Split,
    SplitPart, SplitRule, TimeIndex, Windows,
};
use crate::error::{Error, Result};
use crate::graph::{build_temporal_graph, FeatureTensor, StgSample};
use crate::model::GraphContext;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct PreparedData<S> {
    pub kind: DatasetKind,
    /// Model inputs in raw units; differs from `raw` only after [`Self::with_missing`].
    pub raw_inputs: FeatureTensor<f64>,
    /// Clean signals in raw units; targets always come from here.
    pub raw: FeatureTensor<f64>,
    pub inputs: FeatureTensor<S>,
    pub targets: FeatureTensor<S>,
    pub time: TimeIndex,
    pub windows: Windows,
    pub split: Split,
    pub stats: NormalizationStats,
    pub ctx: GraphContext<S>,
    /// Density class of every node, from the training steps.
    pub density: Vec<DensityClass>,
    pub grid: Option<(usize, usize)>,
}

impl<S: Scalar> PreparedData<S> {
    /// Window, split and fit normalisation on the steps seen by training windows.
    pub fn new(ds: &Dataset, t_in: usize, t_out: usize, rule: &SplitRule) -> Result<Self> {
        let windows = Windows::new(ds.signals.steps(), t_in, t_out, 1)?;
        let split = split_windows(windows.len(), rule, ds.steps_per_day(), 1)?;
        let train_end = windows.end(split.train.end - 1);
        let stats = NormalizationStats::fit(&ds.signals.slice_steps(0, train_end))?;
        Self::with_stats(ds, t_in, t_out, rule, stats)
    }

    /// As [`Self::new`] but with normalisation fixed (e.g. from a checkpoint).
    pub fn with_stats(
        ds: &Dataset,
        t_in: usize,
        t_out: usize,
        rule: &SplitRule,
        stats: NormalizationStats,
    ) -> Result<Self> {
        let windows = Windows::new(ds.signals.steps(), t_in, t_out, 1)?;
        let split = split_windows(windows.len(), rule, ds.steps_per_day(), 1)?;
        let train_end = windows.end(split.train.end - 1);
        let inputs = stats.apply(&ds.signals.cast::<S>())?;
        let temporal = build_temporal_graph(t_in)?;
        Ok(Self {
            kind: ds.meta.kind,
            raw_inputs: ds.signals.clone(),
            raw: ds.signals.clone(),
            targets: inputs.clone(),
            inputs,
            time: ds.time.clone(),
            windows,
            split,
            ctx: GraphContext::new(&ds.graph, &temporal),
            density: density_bins(&ds.signals.slice_steps(0, train_end)),
            stats,
            grid: ds.meta.grid(),
        })
    }

    /// Copy whose inputs have each `(step, node)` zeroed with probability `rate`.
    /// Targets are untouched.
    pub fn with_missing(&self, rate: f64, seed: u64) -> Result<Self> {
        let (raw_inputs, _) = corrupt_missing(&self.raw, rate, seed)?;
        let inputs = self.stats.apply(&raw_inputs.cast::<S>())?;
        Ok(Self {
            raw_inputs,
            inputs,
            ..self.clone()
        })
    }

    pub fn nodes(&self) -> usize {
        self.raw.nodes()
    }

    pub fn features(&self) -> usize {
        self.raw.features()
    }

    pub fn range(&self, part: SplitPart) -> Range<usize> {
        self.split.get(part)
    }

    /// Normalised window `k`: inputs from `inputs`, targets from `targets`.
    pub fn sample(&self, k: usize) -> Result<StgSample<S>> {
        let mut s = self.windows.sample(&self.inputs, &self.time, k)?;
        let mid = s.start + self.windows.t_in;
        s.y = self.targets.slice_steps(mid, mid + self.windows.t_out);
        Ok(s)
    }

    /// Clean target of window `k` in raw units, `T' x N x F`.
    pub fn raw_target(&self, k: usize) -> Result<Array3<f64>> {
        if k >= self.windows.len() {
            return Err(Error::Invalid(format!("window {k} out of range ({} windows)", self.windows.len())));
        }
        let mid = self.windows.start(k) + self.windows.t_in;
        Ok(self.raw.slice_steps(mid, mid + self.windows.t_out).into_data())
    }

    /// Historical-average forecast of window `k`: every horizon step gets the
    /// mean of the input window, per node and feature.
    pub fn historical_average(&self, k: usize) -> Result<Array3<f64>> {
        if k >= self.windows.len() {
            return Err(Error::Invalid(format!("window {k} out of range ({} windows)", self.windows.len())));
        }
        let s = self.windows.start(k);
        let x = self.raw_inputs.slice_steps(s, s + self.windows.t_in);
        let mean = x.data().mean_axis(ndarray::Axis(0)).expect("non-empty window");
        let (n, f) = mean.dim();
        Ok(Array3::from_shape_fn((self.windows.t_out, n, f), |(_, v, c)| mean[[v, c]]))
    }
}
