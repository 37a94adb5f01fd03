//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, counter)`, so the Gaussian test
//! matrix of the range finder does not depend on evaluation order or on the
//! number of threads filling it.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a parent seed and a stream id.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed) }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller on the uniform pair at `2c, 2c + 1`.
    #[inline]
    pub fn gaussian(&self, counter: u64) -> f64 {
        let u1 = self.uniform(counter.wrapping_mul(2));
        let u2 = self.uniform(counter.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }
}

/// Sequential wrapper over [`CounterRng`] for generators that just want a
/// stream of values.
#[derive(Debug, Clone)]
pub struct SeqRng {
    inner: CounterRng,
    counter: u64,
}

impl SeqRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: CounterRng::new(seed),
            counter: 0,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        let v = self.inner.uniform(self.counter);
        self.counter += 1;
        v
    }

    pub fn gaussian(&mut self) -> f64 {
        let v = self.inner.gaussian(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        ((self.uniform() * bound as f64) as usize).min(bound.saturating_sub(1))
    }
}
