//! Seeded RNG discipline.
//!
//! Every stochastic component derives its own ChaCha stream from a user
//! seed plus a string label, so adding or reordering consumers never
//! perturbs an unrelated component's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

/// FNV-1a, used only to fold labels into seeds (stability matters, not speed).
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent stream for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()))
}

/// Independent stream for `(seed, label, index)`, e.g. one per flow.
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
