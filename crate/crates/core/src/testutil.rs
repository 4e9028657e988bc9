use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::check_gradients;
use crate::tape::{Tape, Var};

pub fn rand_array(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn check_grad<F>(inputs: &[Array2<f64>], f: F)
where
    F: Fn(&Tape<f64>, &[Var]) -> Var,
{
    let report = check_gradients(inputs, f);
    assert!(
        report.passes(1e-6),
        "gradient mismatch: {:?}",
        report.per_input
    );
}
