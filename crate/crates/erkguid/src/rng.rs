//! Deterministic randomness plumbing.
//!
//! Every random draw in the library is keyed by the run's master seed plus a
//! purpose label and the indices that identify the draw site (trajectory,
//! coordinate, step, ...). Keys go through a splitmix64 chain into a one-shot
//! ChaCha8 stream, so results never depend on worker count or scheduling
//! order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::state::StateVector;

/// Purpose labels keeping unrelated draw sites on disjoint streams.
pub mod label {
    pub const INIT_NOISE: u64 = 0x494e4954; // "INIT"
    pub const PC_CORRECTOR: u64 = 0x50432d43; // "PC-C"
    pub const POWER_ITER: u64 = 0x504f5752; // "POWR"
    pub const DEGRADE: u64 = 0x44454752; // "DEGR"
    pub const FIXTURE: u64 = 0x46495854; // "FIXT"
}

/// One splitmix64 scramble step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one key by chaining splitmix64.
pub fn derive_key(words: &[u64]) -> u64 {
    let mut acc = 0x243f6a8885a308d3u64; // arbitrary nonzero start
    for &w in words {
        acc = splitmix64(acc ^ w);
    }
    acc
}

/// Seeded stream for a derived key.
pub fn stream(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// One standard-normal draw from a fresh stream keyed by `key`.
pub fn normal_from_key(key: u64) -> f64 {
    stream(key).sample(StandardNormal)
}

/// Initial trajectory noise x ~ N(0, sigma_max^2 I).
///
/// Each coordinate is keyed by (master_seed, trajectory, coordinate), the
/// counter-based contract that keeps batches independent of scheduling.
pub fn init_noise(master_seed: u64, traj_index: u64, dim: usize, sigma_max: f64) -> StateVector {
    DVector::from_fn(dim, |j, _| {
        let key = derive_key(&[master_seed, label::INIT_NOISE, traj_index, j as u64]);
        sigma_max * normal_from_key(key)
    })
}

/// Standard-normal vector for one corrector application, keyed per
/// (master_seed, trajectory, step).
pub fn corrector_noise(master_seed: u64, traj_index: u64, step: u64, dim: usize) -> StateVector {
    let key = derive_key(&[master_seed, label::PC_CORRECTOR, traj_index, step]);
    let mut rng = stream(key);
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// FNV-1a 64-bit hash over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// FNV-1a over the IEEE bit patterns of a state's coordinates.
pub fn state_hash(x: &StateVector) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for v in x.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Seed for the power-iteration start direction at one probe site.
pub fn power_iter_seed(master_seed: u64, x: &StateVector, sigma_index: u64) -> u64 {
    derive_key(&[master_seed, label::POWER_ITER, state_hash(x), sigma_index])
}
