use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetKind, SplitRule, TimeIndex};
use crate::error::{shape_err, Error, Result};
use crate::graph::{FeatureTensor, StgSample};
use crate::scalar::Scalar;

/// Sliding windows over a series, materialised on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub total_steps: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub stride: usize,
}

impl Windows {
    pub fn new(total_steps: usize, t_in: usize, t_out: usize, stride: usize) -> Result<Self> {
        if t_in == 0 || t_out == 0 || stride == 0 {
            return Err(Error::Invalid(format!(
                "window lengths and stride must be positive (t_in {t_in}, t_out {t_out}, stride {stride})"
            )));
        }
        if total_steps < t_in + t_out {
            return Err(Error::Invalid(format!(
                "series of {total_steps} steps is shorter than one window of {} steps",
                t_in + t_out
            )));
        }
        Ok(Self {
            total_steps,
            t_in,
            t_out,
            stride,
        })
    }

    pub fn len(&self) -> usize {
        (self.total_steps - self.t_in - self.t_out) / self.stride + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// First input step of window `k`.
    pub fn start(&self, k: usize) -> usize {
        k * self.stride
    }

    /// One past the last step touched by window `k`.
    pub fn end(&self, k: usize) -> usize {
        self.start(k) + self.t_in + self.t_out
    }

    /// Window `k`: `x` is steps `[s, s + t_in)`, `y` the following `t_out` steps.
    pub fn sample<S: Scalar>(&self, data: &FeatureTensor<S>, time: &TimeIndex, k: usize) -> Result<StgSample<S>> {
        if k >= self.len() {
            return Err(Error::Invalid(format!("window {k} out of range ({} windows)", self.len())));
        }
        if data.steps() != self.total_steps || time.len() != self.total_steps {
            return Err(shape_err("window source steps", self.total_steps, data.steps()));
        }
        let s = self.start(k);
        let mid = s + self.t_in;
        Ok(StgSample {
            x: data.slice_steps(s, mid),
            y: data.slice_steps(mid, mid + self.t_out),
            tod_index: time.tod[s..mid].to_vec(),
            dow_index: time.dow[s..mid].to_vec(),
            start: s,
        })
    }
}

/// All windows of `data`, materialised.
pub fn make_windows<S: Scalar>(
    data: &FeatureTensor<S>,
    time: &TimeIndex,
    t_in: usize,
    t_out: usize,
    stride: usize,
) -> Result<Vec<StgSample<S>>> {
    let w = Windows::new(data.steps(), t_in, t_out, stride)?;
    (0..w.len()).map(|k| w.sample(data, time, k)).collect()
}

/// Contiguous window-index ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    pub fn get(&self, part: SplitPart) -> Range<usize> {
        match part {
            SplitPart::Train => self.train.clone(),
            SplitPart::Val => self.val.clone(),
            SplitPart::Test => self.test.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Chronological split of `n_windows` windows.
///
/// Shares are rounded to the nearest window count, test takes the remainder.
/// With `rule.val_days`, validation is instead carved from the end of the
/// training share: `val_days * steps_per_day / stride` windows, rounded up.
pub fn split_windows(n_windows: usize, rule: &SplitRule, steps_per_day: usize, stride: usize) -> Result<Split> {
    let total: f64 = rule.ratio.iter().sum();
    if rule.ratio.iter().any(|r| !(*r >= 0.0)) || !(total > 0.0) {
        return Err(Error::Invalid(format!("bad split ratio {:?}", rule.ratio)));
    }
    let share = |r: f64| (n_windows as f64 * r / total).round() as usize;
    let (train, val) = match rule.val_days {
        None => {
            let train = share(rule.ratio[0]);
            (train, share(rule.ratio[1]))
        }
        Some(days) => {
            let train_total = share(rule.ratio[0] + rule.ratio[1]);
            let val = (days * steps_per_day).div_ceil(stride.max(1));
            if val >= train_total {
                return Err(Error::Invalid(format!(
                    "{n_windows} windows leave {train_total} for training, too few to carve {val} validation windows"
                )));
            }
            (train_total - val, val)
        }
    };
    if train == 0 || val == 0 || train + val >= n_windows {
        return Err(Error::Invalid(format!(
            "{n_windows} windows are too few for a train/val/test split with ratio {:?}",
            rule.ratio
        )));
    }
    Ok(Split {
        train: 0..train,
        val: train..train + val,
        test: train + val..n_windows,
    })
}

/// Split rule for `kind` with its defaults.
pub fn split_dataset(n_windows: usize, kind: DatasetKind, steps_per_day: usize) -> Result<Split> {
    split_windows(n_windows, &SplitRule::default_for(kind), steps_per_day, 1)
}
