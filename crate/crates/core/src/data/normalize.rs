use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::FeatureTensor;
use crate::scalar::Scalar;

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Mean and population standard deviation of each feature over all steps and nodes.
    pub fn fit(train: &FeatureTensor<f64>) -> Result<Self> {
        let (t, n, f) = train.shape();
        if t * n == 0 {
            return Err(Error::Invalid("cannot fit normalisation on an empty slice".into()));
        }
        let flat = train.data().view().into_shape_with_order((t * n, f)).expect("contiguous");
        let mean = flat.mean_axis(Axis(0)).expect("non-empty");
        let std = flat.std_axis(Axis(0), 0.0);
        let std: Vec<f64> = std.to_vec();
        if let Some(k) = std.iter().position(|&s| !(s > 1e-12)) {
            return Err(Error::Invalid(format!("feature {k} has zero variance on the training slice")));
        }
        Ok(Self {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, f: usize) -> Result<()> {
        if f != self.features() {
            return Err(shape_err("normalisation features", self.features(), f));
        }
        Ok(())
    }

    pub fn apply<S: Scalar>(&self, x: &FeatureTensor<S>) -> Result<FeatureTensor<S>> {
        self.check(x.features())?;
        let mut out = x.clone();
        for mut cell in out.data_mut().lanes_mut(Axis(2)) {
            for (k, v) in cell.iter_mut().enumerate() {
                *v = S::of((v.as_f64() - self.mean[k]) / self.std[k]);
            }
        }
        Ok(out)
    }

    pub fn invert<S: Scalar>(&self, x: &FeatureTensor<S>) -> Result<FeatureTensor<S>> {
        self.check(x.features())?;
        let mut out = x.clone();
        for mut cell in out.data_mut().lanes_mut(Axis(2)) {
            for (k, v) in cell.iter_mut().enumerate() {
                *v = S::of(v.as_f64() * self.std[k] + self.mean[k]);
            }
        }
        Ok(out)
    }

    /// Invert a matrix whose columns are features.
    pub fn invert_matrix<S: Scalar>(&self, m: &Array2<S>) -> Result<Array2<S>> {
        self.check(m.ncols())?;
        let mut out = m.clone();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = S::of(v.as_f64() * self.std[k] + self.mean[k]);
            }
        }
        Ok(out)
    }
}
