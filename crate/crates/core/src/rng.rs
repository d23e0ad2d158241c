//! Named random streams derived from a single master seed.
//!
//! Every consumer of randomness asks for a stream by purpose name; per-item
//! streams (one per image, one per chain) are selected with the ChaCha stream
//! id so that items can be generated in any order, or in parallel, and still
//! reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Seed for the stream named `purpose` under `master`.
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Stream for `purpose`.
pub fn stream(master: u64, purpose: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(master, purpose))
}

/// Stream for item `index` of `purpose`.
pub fn item_stream(master: u64, purpose: &str, index: u64) -> Rng {
    let mut rng = stream(master, purpose);
    rng.set_stream(index);
    rng
}
