//! Forecast error metrics: MAE, RMSE and MAPE, per horizon step and per density class.

use std::collections::BTreeMap;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::DensityClass;
use crate::error::{shape_err, Error, Result};

/// Targets with `|y|` at or below this are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-4;

/// MAE, RMSE and MAPE of one slice. `mape_percent` is `None` when no target
/// clears [`MAPE_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
    pub mape_percent: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    abs: f64,
    sq: f64,
    ape: f64,
    n: usize,
    n_ape: usize,
}

impl Sums {
    fn push(&mut self, y: f64, y_hat: f64) {
        let r = y - y_hat;
        self.abs += r.abs();
        self.sq += r * r;
        self.n += 1;
        if y.abs() > MAPE_FLOOR {
            self.ape += (r / y).abs();
            self.n_ape += 1;
        }
    }

    fn stats(&self) -> ErrorStats {
        let n = self.n.max(1) as f64;
        ErrorStats {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape_percent: (self.n_ape > 0).then(|| 100.0 * self.ape / self.n_ape as f64),
            count: self.n,
        }
    }
}

/// Per-step errors over the forecast horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub mae: Vec<f64>,
    pub rmse: Vec<f64>,
    pub mape_percent: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape_percent: Option<f64>,
    pub count: usize,
    pub per_horizon: HorizonMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_density_class: Option<BTreeMap<String, ErrorStats>>,
}

/// Streaming accumulator over `T' x N x F` target/prediction pairs in original units.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    total: Sums,
    horizon: Vec<Sums>,
    classes: Option<(Vec<DensityClass>, [Sums; 4])>,
}

impl MetricsAccumulator {
    pub fn new(horizon: usize) -> Self {
        Self {
            total: Sums::default(),
            horizon: vec![Sums::default(); horizon],
            classes: None,
        }
    }

    /// Also break errors down by the density class of each node.
    pub fn with_density_classes(mut self, classes: Vec<DensityClass>) -> Self {
        self.classes = Some((classes, [Sums::default(); 4]));
        self
    }

    /// Add one window. `mask[t, n, f] == false` marks a missing target.
    pub fn add(&mut self, y: &Array3<f64>, y_hat: &Array3<f64>, mask: Option<&Array3<bool>>) -> Result<()> {
        if y.dim() != y_hat.dim() {
            return Err(shape_err("metric inputs", format!("{:?}", y.dim()), format!("{:?}", y_hat.dim())));
        }
        if let Some(m) = mask {
            if m.dim() != y.dim() {
                return Err(shape_err("metric mask", format!("{:?}", y.dim()), format!("{:?}", m.dim())));
            }
        }
        let (h, n, _) = y.dim();
        if h != self.horizon.len() {
            return Err(shape_err("metric horizon", self.horizon.len(), h));
        }
        if let Some((classes, _)) = &self.classes {
            if classes.len() != n {
                return Err(shape_err("density classes", n, classes.len()));
            }
        }
        for ((t, node, f), &target) in y.indexed_iter() {
            if mask.is_some_and(|m| !m[[t, node, f]]) {
                continue;
            }
            let pred = y_hat[[t, node, f]];
            self.total.push(target, pred);
            self.horizon[t].push(target, pred);
            if let Some((classes, sums)) = &mut self.classes {
                sums[classes[node] as usize].push(target, pred);
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.total.n == 0 {
            return Err(Error::Invalid("no valid targets to score".into()));
        }
        let total = self.total.stats();
        let steps: Vec<ErrorStats> = self.horizon.iter().map(Sums::stats).collect();
        let per_density_class = self.classes.as_ref().map(|(_, sums)| {
            DensityClass::ALL
                .iter()
                .map(|&c| (c.label().to_string(), sums[c as usize].stats()))
                .collect()
        });
        Ok(MetricsReport {
            mae: total.mae,
            rmse: total.rmse,
            mape_percent: total.mape_percent,
            count: total.count,
            per_horizon: HorizonMetrics {
                mae: steps.iter().map(|s| s.mae).collect(),
                rmse: steps.iter().map(|s| s.rmse).collect(),
                mape_percent: steps.iter().map(|s| s.mape_percent).collect(),
            },
            per_density_class,
        })
    }
}

/// Metrics of a single `T' x N x F` prediction.
pub fn compute_metrics(y: &Array3<f64>, y_hat: &Array3<f64>, mask: Option<&Array3<bool>>) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(y.len_of(Axis(0)));
    acc.add(y, y_hat, mask)?;
    acc.finish()
}
