//! Seed derivation.
//!
//! Every random draw flows from one 64-bit seed. Independent subsystems
//! (data generation, contamination, masking, initialization) read disjoint
//! ChaCha streams of the same key, so any replicate can be re-run in
//! isolation and the draws of one subsystem never shift those of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Generate = 1,
    Contaminate = 2,
    Mask = 3,
    Init = 4,
    Sample = 5,
}

/// Generator for `stream` of the key `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed of Monte-Carlo replicate `r`.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}
