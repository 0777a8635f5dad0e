//! Counter-based random draws.
//!
//! Every draw is addressed by `(seed, stream tag, index, substream)` and is
//! computed directly from that address, so datasets can be regenerated in any
//! order, or in parallel, with identical results.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32-bit words reserved per `(index, substream)` cell: two `u64` draws.
const WORDS_PER_CELL: u128 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyedRng {
    key: [u8; 32],
}

impl KeyedRng {
    pub fn new(seed: u64, stream_tag: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update((stream_tag.len() as u64).to_le_bytes());
        hasher.update(stream_tag.as_bytes());
        Self {
            key: hasher.finalize().into(),
        }
    }

    fn cell(&self, index: u64, substream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(substream);
        rng.set_word_pos(u128::from(index) * WORDS_PER_CELL);
        rng
    }

    /// The two raw words of a cell.
    pub fn words(&self, index: u64, substream: u64) -> [u64; 2] {
        let mut rng = self.cell(index, substream);
        [rng.next_u64(), rng.next_u64()]
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&self, index: u64, substream: u64) -> f64 {
        to_unit(self.words(index, substream)[0])
    }

    /// Standard normal via Box-Muller on the cell's two words.
    pub fn normal(&self, index: u64, substream: u64) -> f64 {
        let [a, b] = self.words(index, substream);
        // 1 - u lies in (0, 1], keeping ln finite.
        let radius = (-2.0 * (1.0 - to_unit(a)).ln()).sqrt();
        radius * (std::f64::consts::TAU * to_unit(b)).cos()
    }
}

fn to_unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
