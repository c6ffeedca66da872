//! Counter-based random streams.
//!
//! [`SeededRng`] is a ChaCha8 keystream addressed by a 64-bit key. Child
//! streams are derived by mixing the parent key with an index, so the draws
//! for item `i` never depend on how many values other items consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SeededRng {
    key: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng::from_key(splitmix64(seed))
    }

    fn from_key(key: u64) -> Self {
        let mut bytes = [0u8; 32];
        for (i, chunk) in bytes.chunks_mut(8).enumerate() {
            chunk.copy_from_slice(&splitmix64(key ^ (i as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)).to_le_bytes());
        }
        SeededRng {
            key,
            inner: ChaCha8Rng::from_seed(bytes),
        }
    }

    /// Independent child stream `index`. Depends only on this stream's key,
    /// not on its current position.
    pub fn substream(&self, index: u64) -> SeededRng {
        SeededRng::from_key(splitmix64(self.key ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Position in the keystream, in 32-bit words.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn set_position(&mut self, pos: u128) {
        self.inner.set_word_pos(pos);
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// 64-bit FNV-1a over a stream of `f64` bit patterns; used to key random
/// streams by content.
pub fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}
