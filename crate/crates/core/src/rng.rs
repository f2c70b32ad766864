//! Purpose-keyed random streams.
//!
//! Every consumer of randomness derives its own generator from the run seed,
//! a purpose label and an index. Adding a new consumer therefore never shifts
//! the draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Generator for `(seed, purpose, index)`; the key is SHA-256 of the three.
pub fn stream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_key(seed, purpose, index))
}

/// A child seed, for handing to APIs that take a plain integer seed.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let key = derive_key(seed, purpose, index);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

fn derive_key(seed: u64, purpose: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a: Vec<u64> = stream(7, "drops", 0).random_iter().take(8).collect();
        let b: Vec<u64> = stream(7, "drops", 0).random_iter().take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn purposes_and_indices_are_independent() {
        let base: u64 = stream(7, "drops", 0).random();
        assert_ne!(base, stream(7, "actions", 0).random::<u64>());
        assert_ne!(base, stream(7, "drops", 1).random::<u64>());
        assert_ne!(base, stream(8, "drops", 0).random::<u64>());
        // "ab" + index vs "a" + shifted bytes must not collide.
        assert_ne!(derive_seed(1, "ab", 0), derive_seed(1, "a", 0));
    }
}
