//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`StreamRng`], a thin wrapper
//! around the ChaCha8 counter-based generator. A stream is addressed by
//! `(seed, domain, index)`: the 256-bit key holds `seed` and `domain` as
//! little-endian words, and the 64-bit ChaCha stream id is `seed ^ index`.
//! Uniform floats take the top 53 bits of a `u64` and scale by `2^-53`, so a
//! dataset can be regenerated bit-for-bit by any ChaCha8 implementation.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Domain tags separating independent uses of the same user seed.
pub mod domain {
    pub const GENERATOR: u64 = 0;
    pub const TRAIN_SAMPLING: u64 = 1;
    pub const EVAL_SAMPLING: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN_DATA: u64 = 4;
}

#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, domain: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(seed ^ index);
        Self { inner }
    }

    /// Stream used for the `index`-th generated instance of a dataset.
    pub fn for_instance(seed: u64, index: u64) -> Self {
        Self::new(seed, domain::GENERATOR, index)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the interval is empty.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased integer in `[0, n)` by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct values from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Index drawn from unnormalized nonnegative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            last = i;
            if target < w {
                return i;
            }
            target -= w;
        }
        last
    }
}
