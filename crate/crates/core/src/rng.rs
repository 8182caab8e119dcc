//! Counter-based random streams keyed by `(seed, replication, stream id)`.
//!
//! The ChaCha key comes from the seed, the 64-bit ChaCha stream selects the
//! replication and the stream id picks a disjoint block of the keystream.
//! Any replication can be regenerated in isolation, in any order, on any
//! worker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per stream id (2⁴⁸ 32-bit words).
const STREAM_BLOCK_BITS: u32 = 48;

/// Stream id for the `j`-th regressor's latents (`j` is 0-based).
pub fn regressor_stream(j: usize) -> u32 {
    1 + j as u32
}

/// Stream id for the regression error latents.
pub const ERROR_STREAM: u32 = 0;

/// Independent generator for `(seed, rep, stream)`.
pub fn stream_rng(seed: u64, rep: u64, stream: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng.set_word_pos(u128::from(stream) << STREAM_BLOCK_BITS);
    rng
}
