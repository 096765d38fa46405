//! Seed derivation. Every stochastic step in a run draws from its own
//! stream keyed by (base seed, stream id), so resuming a checkpoint or
//! reordering independent work never shifts another step's randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id for the patch subsampling of a given layer.
pub fn patch_stream(layer: usize) -> u64 {
    layer as u64 * 2
}

/// Stream id for the stacked-LDA accept/reject loop of a given layer.
pub fn stacked_lda_stream(layer: usize) -> u64 {
    layer as u64 * 2 + 1
}

/// Stream id for the validation split permutation.
pub const VAL_SPLIT_STREAM: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a stream id into an independent 64-bit seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(splitmix64(stream)))
}

/// Deterministic generator for the given (base, stream) pair.
pub fn stream_rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}
