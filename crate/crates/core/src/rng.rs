//! Reproducible random streams.
//!
//! Every random draw in the engine comes from a [`RngStream`] identified by a
//! `(seed, replicate, generation, purpose)` key. The key is mapped to an
//! independent ChaCha8 keystream, so a replicate produces the same draws no
//! matter which thread runs it or in what order replicates are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    Selection,
    Mutation,
    CoarseSampling,
    Bootstrap,
    Other(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Selection => 2,
            Purpose::Mutation => 3,
            Purpose::CoarseSampling => 4,
            Purpose::Bootstrap => 5,
            Purpose::Other(c) => 0x100 + u64::from(c),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub replicate: u64,
    pub generation: u64,
    pub purpose: Purpose,
}

impl RngStream {
    pub fn new(seed: u64, replicate: u64, generation: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            replicate,
            generation,
            purpose,
        }
    }

    /// Same key, different generation.
    pub fn at_generation(self, generation: u64) -> Self {
        Self { generation, ..self }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    /// Builds the generator for this key. Calling twice yields identical draws.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let words = [
            mix64(self.seed ^ 0x6a09_e667_f3bc_c908),
            mix64(self.replicate.wrapping_add(0xbb67_ae85_84ca_a73b)),
            mix64(self.seed.rotate_left(17) ^ self.replicate.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            mix64(self.purpose.code() ^ 0x3c6e_f372_fe94_f82b),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.generation);
        rng
    }
}

/// Derives a sub-seed from a base seed and a label, e.g. one seed per
/// (mode, horizon) pair of an experiment sweep.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(seed ^ mix64(h ^ mix64(index)))
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
