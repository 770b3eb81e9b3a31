//! Deterministic seed derivation.
//!
//! Every randomized component (splitter, bootstrap sampling, feature
//! subsampling, synthetic generator, bootstrap resampling in evaluation)
//! derives its own seed from the run seed, a component tag, and an index.
//! Derivation goes through splitmix64 so that nearby `(seed, index)` pairs
//! produce statistically independent streams, and the result is stable across
//! platforms and releases — it never depends on hash-map iteration order or
//! pointer values.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One step of the splitmix64 mixing function.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a byte string into the running state, one u64 lane at a time.
fn mix_bytes(state: &mut u64, bytes: &[u8]) {
    for chunk in bytes.chunks(8) {
        let mut lane = [0u8; 8];
        lane[..chunk.len()].copy_from_slice(chunk);
        *state ^= u64::from_le_bytes(lane);
        splitmix64(state);
    }
    // Fold in the length so "ab"+"c" and "a"+"bc" cannot collide.
    *state ^= bytes.len() as u64;
    splitmix64(state);
}

/// Derives a child seed from a base seed, a component tag, and an index.
///
/// The same `(base, tag, index)` triple always yields the same seed; any
/// change to one of the three yields an unrelated seed.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut state = base;
    splitmix64(&mut state);
    mix_bytes(&mut state, tag.as_bytes());
    state ^= index;
    splitmix64(&mut state)
}

/// A ChaCha8 generator seeded from `(base, tag, index)`.
///
/// ChaCha8 is used everywhere randomness is needed: it is fast, portable, and
/// its output is identical on every platform for a given seed.
pub fn rng_for(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}
