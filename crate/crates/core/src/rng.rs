//! Seeded random streams.
//!
//! Every run owns one ChaCha8 stream keyed by its seed. Independent units of
//! work (trials, islands, seeds in a sweep) get their own stream selected by
//! a counter, so results never depend on scheduling order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream for `(seed, index)`.
pub fn substream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream for `(seed, domain, index)`; `domain` separates unrelated consumers
/// that would otherwise share an index.
pub fn tagged_substream(seed: u64, domain: u64, index: u64) -> SimRng {
    substream(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15), index)
}

pub fn seeded(seed: u64) -> SimRng {
    substream(seed, 0)
}

/// A child seed for `(seed, domain, index)`, for consumers that build their
/// own streams (e.g. a whole environment).
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    tagged_substream(seed, domain, index).next_u64()
}
