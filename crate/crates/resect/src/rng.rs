//! Deterministic RNG derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream seeded through
//! [`derive_seed`]. The derivation is pure arithmetic on the master seed plus
//! a stream tag and an index, so any episode, noise draw, or patch sample can
//! be reproduced in isolation without replaying the runs before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same master seed independent.
pub const TAG_EPISODE: u64 = 0x45;
pub const TAG_NOISE: u64 = 0x4e;
pub const TAG_POLICY: u64 = 0x50;
pub const TAG_PATCH: u64 = 0x53;
pub const TAG_DATA: u64 = 0x44;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `(master, tag, index)` into a single 64-bit seed.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut state = master;
    let a = splitmix64(&mut state);
    state ^= tag.wrapping_mul(0xd6e8_feb8_6659_fd93);
    let b = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xa076_1d64_78bd_642f);
    let c = splitmix64(&mut state);
    a ^ b.rotate_left(17) ^ c.rotate_left(43)
}

/// ChaCha8 stream for `(master, tag, index)`.
pub fn stream(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}
