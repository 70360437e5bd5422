//! Explicit seeding. Every stochastic operation takes a [`Seed`]; sub-streams
//! are derived by mixing integer keys so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    pub fn new(value: u64) -> Self {
        Seed(value)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Child seed for sub-stream `key`. Distinct keys give unrelated streams.
    pub fn derive(self, key: u64) -> Seed {
        Seed(mix(mix(self.0) ^ key.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
    }

    /// Child seed for a multi-part key such as `(scene, distance, method)`.
    pub fn derive_all(self, keys: &[u64]) -> Seed {
        keys.iter().fold(self, |s, &k| s.derive(k))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_distinct() {
        let s = Seed(7);
        assert_eq!(s.derive(3), Seed(7).derive(3));
        assert_ne!(s.derive(3), s.derive(4));
        assert_ne!(s.derive_all(&[1, 2]), s.derive_all(&[2, 1]));
        let a: u64 = s.rng().random();
        let b: u64 = Seed(7).rng().random();
        assert_eq!(a, b);
    }
}
