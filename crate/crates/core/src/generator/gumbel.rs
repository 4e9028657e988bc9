use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{softmax_rows_array, Tape, Var};

/// Standard Gumbel noise of the given shape.
pub fn sample_gumbel<S: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<S> {
    let g = Gumbel::new(0.0, 1.0).expect("standard gumbel");
    Array2::from_shape_fn((rows, cols), |_| S::of(g.sample(rng)))
}

/// One-hot of the row-wise argmax (first maximum on ties).
pub fn one_hot_argmax<S: Scalar>(p: &Array2<S>) -> Array2<S> {
    let mut out = Array2::zeros(p.dim());
    for (r, row) in p.rows().into_iter().enumerate() {
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        out[[r, best]] = S::one();
    }
    out
}

/// Row-wise Gumbel-Softmax sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample<S> {
    /// Relaxed sample on the simplex.
    pub soft: Array2<S>,
    /// Argmax one-hot, present in hard mode.
    pub hard: Option<Array2<S>>,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("gumbel temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `softmax((logits + g) / tau)` for given noise `g`; each row is an independent categorical.
pub fn gumbel_softmax_with_noise<S: Scalar>(
    logits: &Array2<S>,
    noise: &Array2<S>,
    tau: f64,
    hard: bool,
) -> Result<GumbelSample<S>> {
    check_tau(tau)?;
    if logits.dim() != noise.dim() {
        return Err(crate::error::shape_err("gumbel noise", format!("{:?}", logits.dim()), format!("{:?}", noise.dim())));
    }
    let soft = softmax_rows_array(&((logits + noise) / S::of(tau)));
    let hard = hard.then(|| one_hot_argmax(&soft));
    Ok(GumbelSample { soft, hard })
}

/// Draw fresh Gumbel noise and sample every row of `logits`.
pub fn gumbel_softmax<S: Scalar, R: Rng + ?Sized>(
    logits: &Array2<S>,
    tau: f64,
    hard: bool,
    rng: &mut R,
) -> Result<GumbelSample<S>> {
    check_tau(tau)?;
    let noise = sample_gumbel(rng, logits.nrows(), logits.ncols());
    gumbel_softmax_with_noise(logits, &noise, tau, hard)
}

/// Tape version. Returns `(soft, applied)`: in hard mode `applied` carries the
/// one-hot forward value with the soft sample's gradient (straight-through).
pub fn gumbel_softmax_tape<S: Scalar>(
    t: &Tape<S>,
    logits: Var,
    noise: &Array2<S>,
    tau: f64,
    hard: bool,
) -> (Var, Var) {
    let noisy = t.add(logits, t.leaf(noise.clone()));
    let soft = t.softmax_rows(t.scale(noisy, S::of(1.0 / tau)));
    if hard {
        let onehot = one_hot_argmax(&t.value(soft));
        (soft, t.straight_through(soft, onehot))
    } else {
        (soft, soft)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_grad, rand_array};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_positive_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gumbel_softmax(&array![[1.0, 2.0]], 0.0, false, &mut rng).is_err());
        assert!(gumbel_softmax(&array![[1.0, 2.0]], -1.0, true, &mut rng).is_err());
    }

    #[test]
    fn rows_on_simplex_and_hard_is_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = rand_array(50, 3, 1) * 4.0;
        let s = gumbel_softmax(&logits, 0.7, true, &mut rng).unwrap();
        for row in s.soft.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        for row in s.hard.unwrap().rows() {
            assert_eq!(row.sum(), 1.0);
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn dominant_logit_wins_at_low_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = array![[10.0, 0.0, 0.0]];
        let wins = (0..1000)
            .filter(|_| gumbel_softmax(&logits, 0.01, true, &mut rng).unwrap().hard.unwrap()[[0, 0]] == 1.0)
            .count();
        assert!(wins >= 990, "{wins}");
    }

    #[test]
    fn soft_sample_sharpens_towards_hard_as_tau_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = rand_array(20, 3, 2);
        let noise = sample_gumbel::<f64, _>(&mut rng, 20, 3);
        let hard = gumbel_softmax_with_noise(&logits, &noise, 1.0, true).unwrap().hard.unwrap();
        let mut prev = f64::INFINITY;
        for tau in [1.0, 0.1, 0.01] {
            let soft = gumbel_softmax_with_noise(&logits, &noise, tau, false).unwrap().soft;
            let dist = (&soft - &hard).mapv(f64::abs).sum();
            assert!(dist < prev);
            prev = dist;
        }
        // Per row, the L1 distance to one-hot is at most 2 (K - 1) exp(-gap / tau).
        let soft = gumbel_softmax_with_noise(&logits, &noise, 0.01, false).unwrap().soft;
        let perturbed = &logits + &noise;
        for r in 0..20 {
            let mut v: Vec<f64> = perturbed.row(r).to_vec();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let bound = 4.0 * (-(v[0] - v[1]) / 0.01).exp();
            let dist = (&soft.row(r) - &hard.row(r)).mapv(f64::abs).sum();
            assert!(dist <= bound + 1e-12, "row {r}: {dist} > {bound}");
        }
    }

    #[test]
    fn soft_path_gradient() {
        let noise = rand_array(4, 3, 9);
        let target = rand_array(4, 3, 10);
        check_grad(&[rand_array(4, 3, 1)], |t, v| {
            let (soft, _) = gumbel_softmax_tape(t, v[0], &noise, 0.5, false);
            t.sum(t.mul(soft, t.leaf(target.clone())))
        });
    }

    #[test]
    fn uniform_logits_give_uniform_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 100_000;
        let logits = Array2::<f64>::zeros((draws, 3));
        let hard = gumbel_softmax(&logits, 1.0, true, &mut rng).unwrap().hard.unwrap();
        for c in 0..3 {
            let freq = hard.column(c).sum() / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.03, "class {c}: {freq}");
        }
    }
}
