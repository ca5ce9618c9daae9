//! Derived random streams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by the run
//! seed plus a small tuple of identifiers, so results do not depend on the
//! order in which tasks execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep derived seeds for different purposes disjoint.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    Measurement = 2,
    Prior = 3,
    Message = 4,
    Fusion = 5,
    Inference = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and identifiers into a new seed.
pub fn derive(base: u64, stream: Stream, ids: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ (stream as u64).wrapping_mul(0xa076_1d64_78bd_642f));
    for &id in ids {
        h = splitmix64(h ^ id);
    }
    h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, stream: Stream, ids: &[u64]) -> Rng {
    rng(derive(base, stream, ids))
}
