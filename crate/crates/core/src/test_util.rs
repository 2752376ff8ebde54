//! Fixtures shared by unit tests.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::DenseMatrix;

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

/// max |QᵀQ - I| over the columns of `q`.
pub fn orthonormality_error(q: &DenseMatrix) -> f64 {
    let g = q.transpose_mul(q).unwrap();
    g.max_abs_diff(&DenseMatrix::identity(g.rows()))
}
