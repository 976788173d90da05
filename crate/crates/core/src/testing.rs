use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{DenseMatrix, SpdMatrix};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn random_matrix(g: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(g))
}

pub(crate) fn random_spd(g: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    let a = random_matrix(g, n, n);
    SpdMatrix::new(&a * a.transpose() / n as f64 + DenseMatrix::identity(n, n) * 0.3).unwrap()
}

pub(crate) fn random_normalized_spd(g: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    random_spd(g, n).normalized().unwrap().0
}
