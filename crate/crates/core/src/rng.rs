//! Deterministic random stream used by every stochastic operation.
//!
//! The generator is xoshiro256++ seeded through SplitMix64 (the seeding
//! procedure of `rand_xoshiro`). Reals are formed from the top 53 bits of a
//! 64-bit output, integers in a range use `rand`'s widening-multiply
//! rejection sampler on 32-bit words. Both conversions are
//! platform-independent, so a seed pins the whole sequence.
//!
//! The stream counts every 64-bit word it hands out so tests can account for
//! exactly how much randomness an operation consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: Xoshiro256PlusPlus,
    words: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            words: 0,
        }
    }

    /// Uniform real in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. `n` must be non-zero and fit in 32 bits.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0 && n <= u32::MAX as usize);
        self.random_range(0..n as u32) as usize
    }

    /// Number of 64-bit words consumed so far.
    pub fn words_consumed(&self) -> u64 {
        self.words
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
