//! Counter-based random streams.
//!
//! Every sample owns an independent ChaCha stream addressed by
//! `(run seed, level, sample index)`: the key is derived from the seed and
//! level, the stream id is the sample index. Results therefore do not depend
//! on the order or the thread in which samples are drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SampleRng = ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(seed), |acc, &l| mix64(acc ^ mix64(l.wrapping_add(0x632b_e59b_d9b4_e019))))
}

/// Key material shared by all samples of one level of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelStreams {
    key: [u8; 32],
}

impl LevelStreams {
    pub fn new(seed: u64, level: usize) -> Self {
        let mut key = [0u8; 32];
        let mut state = derive_seed(seed, &[level as u64]);
        for chunk in key.chunks_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self { key }
    }

    /// The random stream of sample `index`.
    pub fn stream(&self, index: u64) -> SampleRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}
