//! Deterministic random stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha generator obtained
//! through [`stream_rng`], keyed by the experiment seed plus a list of
//! labelled components (subject index, capture index, stage name, ...).
//! No generator ever touches OS entropy, so a fixed seed reproduces the
//! same bytes regardless of thread count or call order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer. Stable across platforms, good avalanche.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a seed and labelled stream components into a single 64-bit hash.
pub fn stream_hash(seed: u64, parts: &[u64]) -> u64 {
    let mut h = mix(seed ^ 0x6d6f_7270_6869_7269);
    for &p in parts {
        h = mix(h ^ p);
    }
    h
}

/// FNV-1a hash of a label string, for naming sub-streams.
pub fn label(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// ChaCha generator for the stream identified by `(seed, parts)`.
///
/// The 64-bit stream hash is expanded to the full 256-bit ChaCha key with
/// splitmix64, so distinct streams get unrelated key material.
pub fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut state = stream_hash(seed, parts);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = mix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Standard normal draw via Box-Muller. Two uniforms per call keeps the
/// stream consumption rate fixed, so callers stay schedule-independent.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
