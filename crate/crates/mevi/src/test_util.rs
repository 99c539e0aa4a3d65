//! Shared fixtures for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::embedding::{EmbeddingSet, Matrix};

/// Uniform random vectors in [-1, 1) with ids "d0", "d1", ...
pub fn random_embedding_set(n: usize, dim: usize, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut m = Matrix::with_capacity(dim, n);
    for _ in 0..n {
        let row: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        m.push_row(&row);
    }
    let ids = (0..n).map(|i| format!("d{i}")).collect();
    EmbeddingSet::new(ids, m).unwrap()
}

/// The two-pair toy set: {(0,0), (0,1), (10,10), (10,11)}.
pub fn toy_four_points() -> EmbeddingSet {
    let mut m = Matrix::new(2);
    m.push_row(&[0.0, 0.0]);
    m.push_row(&[0.0, 1.0]);
    m.push_row(&[10.0, 10.0]);
    m.push_row(&[10.0, 11.0]);
    EmbeddingSet::new(
        vec!["a".into(), "b".into(), "c".into(), "d".into()],
        m,
    )
    .unwrap()
}
