//! Named, independent random streams derived from a run seed.
//!
//! Every consumer of randomness (each parameter's initializer, batch
//! shuffling, dropout of each task) gets its own stream keyed by
//! `(seed, name)`, so changing how much one consumer draws never shifts what
//! another one sees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::tensor::{Real, Tensor};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Glorot/Xavier uniform over a `rows × cols` matrix.
pub fn glorot_uniform<T: Real>(rows: usize, cols: usize, rng: &mut StreamRng) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}
