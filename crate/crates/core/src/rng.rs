//! Seeded randomness shared by every stochastic routine in the crate.
//!
//! All draws go through ChaCha8 so that a `(seed, call order)` pair fully
//! determines the stream on every platform.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeds a generator from two independent 64-bit keys.
pub fn seeded_pair(a: u64, b: u64) -> DetRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| std * standard_normal(rng)).collect()
}

/// 64-bit FNV-1a, used to key per-token embeddings by their text.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
