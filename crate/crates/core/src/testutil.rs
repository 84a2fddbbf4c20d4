use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

use crate::distribution::SearchDistribution;

/// Well-conditioned random factor: diagonal in [0.5, 2], off-diagonal in [−0.5, 0.5].
pub(crate) fn random_chol(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let diag = Uniform::new(0.5, 2.0).unwrap();
    let off = Uniform::new(-0.5, 0.5).unwrap();
    DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => rng.sample(diag),
        std::cmp::Ordering::Less => rng.sample(off),
        std::cmp::Ordering::Greater => 0.0,
    })
}

pub(crate) fn random_dist(rng: &mut ChaCha8Rng, d: usize) -> SearchDistribution {
    let chol = random_chol(rng, d);
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    SearchDistribution::new(mean, chol).unwrap()
}
