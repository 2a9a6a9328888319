//! Fixtures shared by the benchmarks.

use dxtext::{EmbeddingStore, RngStream};
use rand::Rng;

/// `n` words with coordinates uniform in `[-1, 1]^dim`.
pub fn uniform_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = RngStream::new(seed, 0);
    EmbeddingStore::from_rows((0..n).map(|i| {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        (format!("w{i}"), v)
    }))
    .expect("distinct words")
}
