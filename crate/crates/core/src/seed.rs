//! Named seed derivation. Every random draw in the crate starts from a
//! [`SeedStream`]; children are keyed by label so streams stay stable when
//! new consumers are added.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        SeedStream(splitmix64(master))
    }

    /// Child stream for a named consumer.
    pub fn derive(&self, label: &str) -> SeedStream {
        // FNV-1a over the label, then mixed with the parent state.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        SeedStream(splitmix64(self.0 ^ splitmix64(h)))
    }

    /// Child stream for the `i`-th repetition of a consumer.
    pub fn index(&self, i: u64) -> SeedStream {
        SeedStream(splitmix64(self.0.wrapping_add(splitmix64(i ^ 0xA076_1D64_78BD_642F))))
    }

    pub fn value(&self) -> u64 {
        self.0
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
