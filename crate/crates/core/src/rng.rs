//! Seed derivation.
//!
//! Every random draw in the study comes from a ChaCha12 generator keyed by the
//! master seed, with the 64-bit stream id laid out as
//!
//! ```text
//! bits 63..16  replicate index
//! bits 15..8   purpose
//! bits  7..0   sub-stream (experiment index within a replicate)
//! ```
//!
//! so replicate `r` draws the same numbers no matter which worker runs it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Population = 1,
    Sample = 2,
    Mcmc = 3,
    Importance = 4,
    NullPopulation = 5,
    NullSample = 6,
    NullMcmc = 7,
    NullImportance = 8,
}

pub fn stream_id(replicate: u64, purpose: Purpose, sub: u8) -> u64 {
    assert!(replicate < (1 << 48), "replicate index out of range");
    (replicate << 16) | ((purpose as u64) << 8) | sub as u64
}

/// Generator for one (seed, replicate, purpose, sub-stream) cell.
pub fn stream(seed: u64, replicate: u64, purpose: Purpose, sub: u8) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(replicate, purpose, sub));
    rng
}

/// A 64-bit seed for an operation that takes its own `seed` argument.
pub fn derive_seed(seed: u64, replicate: u64, purpose: Purpose, sub: u8) -> u64 {
    stream(seed, replicate, purpose, sub).next_u64()
}

pub fn seeded(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
