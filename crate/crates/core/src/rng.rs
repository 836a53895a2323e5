//! Deterministic, splittable random streams keyed by `(seed, stream)`.
//!
//! Each key maps to an independent ChaCha8 stream (the stream id is the
//! ChaCha nonce), so per-example draws do not depend on the order in which
//! examples are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// A key for an independent sub-stream identified by `id`.
    pub fn child(&self, id: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(id)),
        }
    }

    /// Convenience for nested identifiers, e.g. `(stage, epoch, example)`.
    pub fn child_path(&self, ids: &[u64]) -> Self {
        ids.iter().fold(*self, |key, &id| key.child(id))
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
