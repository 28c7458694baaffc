//! Fixtures shared by the benches: a benchmark-scale synthetic problem
//! (100 × 100 × 15, rank 25) and the model state a solver iteration sees.

use krpsgd_core::synth::{generate, GenSpec};
use krpsgd_core::{DenseTensor, KruskalModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const I: usize = 100;
pub const J: usize = 15;
pub const RANK: usize = 25;
pub const BATCH: usize = 18;

pub fn fixture_tensor() -> DenseTensor {
    generate(&GenSpec {
        i: I,
        j: J,
        rank: RANK,
        spread: 15,
        magnitude: 24.0,
        noise: 0.05,
        seed: 1,
    })
    .expect("fixture generation")
    .tensor
}

/// A mid-optimization model state: random factors, nothing special.
pub fn fixture_model() -> KruskalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    KruskalModel::random_uniform(&[I, I, J], RANK, &mut rng).expect("fixture model")
}
