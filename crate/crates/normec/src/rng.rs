//! Deterministic randomness with addressed streams.
//!
//! Every stochastic quantity in a run draws from a ChaCha stream addressed by
//! (run seed, domain, round, client). The address, not the order in which
//! workers reach it, defines the draw, so client loops and grid cells can be
//! scheduled on any number of threads without changing a single output bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::vector::Vector;

/// Purpose of a stream; keeps draws from unrelated phases disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamDomain {
    /// Noise added to a client transmission in a given round.
    Transmit = 0,
    /// Memory perturbation drawn once per client at initialization.
    Init = 1,
}

const ROUND_BITS: u32 = 36;
const CLIENT_BITS: u32 = 24;

/// Stream addressed by (seed, domain, round, client).
pub fn client_round_rng(seed: u64, domain: StreamDomain, round: u64, client: u64) -> ChaCha8Rng {
    assert!(round < 1 << ROUND_BITS, "round index out of stream range");
    assert!(client < 1 << CLIENT_BITS, "client index out of stream range");
    let stream =
        ((domain as u64) << (ROUND_BITS + CLIENT_BITS)) | (round << CLIENT_BITS) | client;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable child seed for grid cells and Monte-Carlo repetitions
/// (SplitMix64 finalizer over the pair).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Vector of iid Gaussians with the given per-coordinate standard deviation.
pub fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vector {
    let values = (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect();
    Vector::from_vec(values)
}
