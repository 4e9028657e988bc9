use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureTensor;
use crate::scalar::Scalar;

/// Entries `(t, n)` zeroed by [`corrupt_missing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionMask {
    pub mask: Array2<bool>,
    pub rate: f64,
    pub seed: u64,
}

impl CorruptionMask {
    pub fn masked_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Zero every feature of each `(t, n)` entry independently with probability `rate`.
pub fn corrupt_missing<S: Scalar>(
    data: &FeatureTensor<S>,
    rate: f64,
    seed: u64,
) -> Result<(FeatureTensor<S>, CorruptionMask)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Invalid(format!("missing rate must lie in [0, 1], got {rate}")));
    }
    let (t, n, _) = data.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = Array2::from_shape_fn((t, n), |_| rng.random::<f64>() < rate);
    let mut out = data.clone();
    for ((ti, ni), &m) in mask.indexed_iter() {
        if m {
            out.data_mut().index_axis_mut(Axis(0), ti).row_mut(ni).fill(S::zero());
        }
    }
    Ok((out, CorruptionMask { mask, rate, seed }))
}

/// Density class of a node, by normalised fraction of non-zero steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DensityClass {
    #[serde(rename = "0-0.25")]
    Q1,
    #[serde(rename = "0.25-0.5")]
    Q2,
    #[serde(rename = "0.5-0.75")]
    Q3,
    #[serde(rename = "0.75-1.0")]
    Q4,
}

impl DensityClass {
    pub const ALL: [DensityClass; 4] = [DensityClass::Q1, DensityClass::Q2, DensityClass::Q3, DensityClass::Q4];

    /// Right-closed bins: `[0, .25]`, `(.25, .5]`, `(.5, .75]`, `(.75, 1]`.
    pub fn of(normalized: f64) -> Self {
        if normalized <= 0.25 {
            DensityClass::Q1
        } else if normalized <= 0.5 {
            DensityClass::Q2
        } else if normalized <= 0.75 {
            DensityClass::Q3
        } else {
            DensityClass::Q4
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DensityClass::Q1 => "0-0.25",
            DensityClass::Q2 => "0.25-0.5",
            DensityClass::Q3 => "0.5-0.75",
            DensityClass::Q4 => "0.75-1.0",
        }
    }
}

/// Per-node density: fraction of steps with any non-zero feature, divided by the maximum over nodes.
pub fn node_density<S: Scalar>(targets: &FeatureTensor<S>) -> Vec<f64> {
    let (t, n, _) = targets.shape();
    let mut counts = vec![0usize; n];
    for step in targets.data().outer_iter() {
        for (v, row) in step.outer_iter().enumerate() {
            if row.iter().any(|x| *x != S::zero()) {
                counts[v] += 1;
            }
        }
    }
    let frac: Vec<f64> = counts.iter().map(|&c| c as f64 / t.max(1) as f64).collect();
    let max = frac.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![0.0; n];
    }
    frac.iter().map(|f| f / max).collect()
}

pub fn density_bins<S: Scalar>(targets: &FeatureTensor<S>) -> Vec<DensityClass> {
    node_density(targets).into_iter().map(DensityClass::of).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ones(t: usize, n: usize) -> FeatureTensor<f64> {
        FeatureTensor::new(Array3::from_elem((t, n, 2), 1.5)).unwrap()
    }

    #[test]
    fn rate_bounds() {
        assert!(corrupt_missing(&ones(2, 2), -0.1, 0).is_err());
        assert!(corrupt_missing(&ones(2, 2), 1.1, 0).is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let x = ones(20, 5);
        let (y, m) = corrupt_missing(&x, 0.0, 7).unwrap();
        assert_eq!(y, x);
        assert!(m.mask.iter().all(|&b| !b));
    }

    #[test]
    fn full_rate_zeroes_everything() {
        let (y, m) = corrupt_missing(&ones(20, 5), 1.0, 7).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.masked_fraction(), 1.0);
    }

    #[test]
    fn fraction_and_determinism() {
        let x = ones(200, 100);
        let (a, ma) = corrupt_missing(&x, 0.3, 1).unwrap();
        let (b, mb) = corrupt_missing(&x, 0.3, 1).unwrap();
        let (_, mc) = corrupt_missing(&x, 0.3, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_ne!(ma.mask, mc.mask);
        let f = ma.masked_fraction();
        assert!((0.29..=0.31).contains(&f), "{f}");
        // Masked entries are zero in every feature, others untouched.
        for ((t, n), &m) in ma.mask.indexed_iter() {
            let expect = if m { 0.0 } else { 1.5 };
            assert!(a.data().slice(ndarray::s![t, n, ..]).iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn density_examples() {
        // Node 0 non-zero on 10% of steps, node 1 on 40%, node 2 never.
        let data = Array3::from_shape_fn((100, 3, 1), |(t, n, _)| match n {
            0 if t < 10 => 1.0,
            1 if t < 40 => 2.0,
            _ => 0.0,
        });
        let x = FeatureTensor::new(data).unwrap();
        let d = node_density(&x);
        assert_eq!(d, vec![0.25, 1.0, 0.0]);
        assert_eq!(density_bins(&x), vec![DensityClass::Q1, DensityClass::Q4, DensityClass::Q1]);
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(DensityClass::of(0.0), DensityClass::Q1);
        assert_eq!(DensityClass::of(0.5), DensityClass::Q2);
        assert_eq!(DensityClass::of(0.5000001), DensityClass::Q3);
        assert_eq!(DensityClass::of(1.0), DensityClass::Q4);
        assert_eq!(serde_json::to_string(&DensityClass::Q2).unwrap(), "\"0.25-0.5\"");
    }
}
