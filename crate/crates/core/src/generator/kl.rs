use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Diagonal Gaussian parameterised by mean and log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `mu + exp(log_var / 2) * eta`, `eta ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        if self.log_var.len() != self.mu.len() {
            return Err(shape_err("latent log-variance", self.mu.len(), self.log_var.len()));
        }
        if self.log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent log-variance".into()));
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| {
                let eta: f64 = rng.sample(StandardNormal);
                m + (lv / 2.0).exp() * eta
            })
            .collect())
    }
}

/// Mean and variance of one group's latent sum `z + z_phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlInput {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// `1/2 sum_k (var_k + mu_k^2 - 1 - ln var_k)` summed over groups, against `N(0, I)`.
pub fn kl_loss(inputs: &[KlInput]) -> Result<f64> {
    let mut total = 0.0;
    for g in inputs {
        if g.mu.len() != g.var.len() {
            return Err(shape_err("kl variance", g.mu.len(), g.var.len()));
        }
        for (&m, &v) in g.mu.iter().zip(&g.var) {
            if !(v > 0.0) || !v.is_finite() || !m.is_finite() {
                return Err(Error::Invalid(format!("kl needs positive finite variance, got {v}")));
            }
            total += 0.5 * (v + m * m - 1.0 - v.ln());
        }
    }
    Ok(total)
}

/// Tape version for `1 x d` mean and variance rows.
pub fn kl_tape<S: Scalar>(t: &Tape<S>, mu: Var, var: Var) -> Var {
    let inner = t.sub(t.add(var, t.square(mu)), t.ln(var));
    let d = t.shape(mu).1;
    t.scale(t.add_scalar(t.sum(inner), S::of(-(d as f64))), S::of(0.5))
}

/// Values of a `1 x d` tape row as a vector.
pub(crate) fn row_vec<S: Scalar>(a: &Array2<S>) -> Vec<f64> {
    a.iter().map(|v| v.as_f64()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_grad, rand_array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one(mu: f64, var: f64) -> KlInput {
        KlInput { mu: vec![mu], var: vec![var] }
    }

    #[test]
    fn standard_normal_is_zero() {
        assert_eq!(kl_loss(&[KlInput { mu: vec![0.0; 5], var: vec![1.0; 5] }]).unwrap(), 0.0);
    }

    #[test]
    fn unit_shift_is_half() {
        assert!((kl_loss(&[one(1.0, 1.0)]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn groups_add() {
        let a = kl_loss(&[one(1.0, 2.0)]).unwrap();
        let b = kl_loss(&[one(-0.3, 0.4)]).unwrap();
        let both = kl_loss(&[one(1.0, 2.0), one(-0.3, 0.4)]).unwrap();
        assert!((a + b - both).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_variance() {
        assert!(kl_loss(&[one(0.0, 0.0)]).is_err());
        assert!(kl_loss(&[one(0.0, -1.0)]).is_err());
        assert!(kl_loss(&[KlInput { mu: vec![0.0], var: vec![] }]).is_err());
    }

    // E_q[ln q(x) - ln p(x)] estimated from samples of q.
    fn monte_carlo_kl(mu: &[f64], var: &[f64], n: usize, seed: u64) -> f64 {
        let q = LatentGaussian {
            mu: mu.to_vec(),
            log_var: var.iter().map(|v| v.ln()).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        for _ in 0..n {
            let x = q.sample(&mut rng).unwrap();
            for k in 0..mu.len() {
                let log_q = -0.5 * ((x[k] - mu[k]).powi(2) / var[k] + var[k].ln());
                let log_p = -0.5 * x[k] * x[k];
                acc += log_q - log_p;
            }
        }
        acc / n as f64
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let mc = monte_carlo_kl(&[1.0], &[1.0], 100_000, 1);
        assert!((mc - 0.5).abs() / 0.5 < 0.02, "{mc}");
        let mu = [0.7, -1.2, 0.4];
        let var = [0.5, 1.8, 2.5];
        let exact = kl_loss(&[KlInput { mu: mu.to_vec(), var: var.to_vec() }]).unwrap();
        let mc = monte_carlo_kl(&mu, &var, 100_000, 2);
        assert!((mc - exact).abs() / exact < 0.02, "{mc} vs {exact}");
    }

    #[test]
    fn tape_matches_closed_form_and_gradients() {
        let mu = rand_array(1, 4, 1);
        let var = rand_array(1, 4, 2).mapv(|v| v + 1.5);
        let t = Tape::new();
        let k = kl_tape(&t, t.leaf(mu.clone()), t.leaf(var.clone()));
        let exact = kl_loss(&[KlInput { mu: row_vec(&mu), var: row_vec(&var) }]).unwrap();
        assert!((t.scalar(k) - exact).abs() < 1e-12);
        check_grad(&[mu, var], |t, v| kl_tape(t, v[0], v[1]));
    }

    proptest::proptest! {
        #[test]
        fn positive_away_from_standard(mu in -3.0f64..3.0, var in 0.05f64..5.0) {
            let k = kl_loss(&[one(mu, var)]).unwrap();
            proptest::prop_assert!(k >= 0.0);
            if mu.abs() > 1e-3 || (var - 1.0).abs() > 1e-3 {
                proptest::prop_assert!(k > 0.0);
            }
        }
    }
}
