//! Seeded, counter-based random streams.
//!
//! Every stochastic operation in the stack draws from a ChaCha8 stream
//! keyed by an explicit 64-bit seed. Independent sub-streams are derived
//! from `(seed, domain, index)` so per-sample work can run in parallel
//! without sharing generator state.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::element::Element;

pub type Rng = ChaCha8Rng;

/// Root stream for a run.
pub fn seed_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 step, used only for key derivation.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent stream from `(seed, domain, index)`.
///
/// The domain string keeps unrelated consumers (noise draws, data
/// selection, initialization) on disjoint streams even at equal indices.
pub fn derive_rng(seed: u64, domain: &str, index: u64) -> Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    for &b in domain.as_bytes() {
        state ^= u64::from(b);
        splitmix64(&mut state);
    }
    state ^= index;
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stable 64-bit FNV-1a over a string, for deriving per-entity stream indices.
pub fn stream_index(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `n` i.i.d. standard normal draws.
pub fn standard_normal<T: Element>(rng: &mut Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64(v)
        })
        .collect()
}

/// One standard normal draw.
pub fn normal_draw<T: Element>(rng: &mut Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::from_f64(v)
}

/// Uniform init on `(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
pub fn uniform_init<T: Element>(rng: &mut Rng, fan_in: usize, n: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
}

/// Choose `k` distinct indices from `0..n` uniformly (partial Fisher-Yates).
pub fn sample_without_replacement(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} from {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
