//! Named random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is
//! derived from a root seed, a stream name and an index. Two streams with the
//! same triple produce identical draws no matter in which order, or on which
//! thread, they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a stream name and index into a 64-bit sub-seed.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a over the stream name keeps the mapping stable across platforms.
    let mut name_hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.as_bytes() {
        name_hash ^= u64::from(*b);
        name_hash = name_hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ name_hash).wrapping_add(splitmix64(index)))
}

pub fn stream(seed: u64, name: &str, index: u64) -> StreamRng {
    let sub = derive_seed(seed, name, index);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(sub.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
