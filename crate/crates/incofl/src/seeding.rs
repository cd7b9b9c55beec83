//! Deterministic RNG streams.
//!
//! Every random draw in a run is made from a stream derived from the run
//! seed plus a domain label and integer coordinates (client id, round,
//! epoch, ...). Streams are independent of scheduling, so parallel client
//! training cannot perturb results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mixes the seed, a domain string, and coordinates into one u64.
pub fn derive_seed(seed: u64, domain: &str, parts: &[u64]) -> u64 {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for byte in domain.bytes() {
        state ^= u64::from(byte);
        acc ^= splitmix64(&mut state);
    }
    for &part in parts {
        state ^= part;
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// A ChaCha stream keyed by (seed, domain, coordinates).
pub fn derive_rng(seed: u64, domain: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, parts))
}
