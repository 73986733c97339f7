//! Seeded, splittable random streams.
//!
//! Every stochastic draw in the pipeline goes through a [`SeededRng`]. A
//! generator is identified by `(seed, stream_id)`; ChaCha's native stream
//! parameter keeps distinct ids on disjoint keystreams, so substreams are
//! addressed by id rather than by position in a shared sequence.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream tags for the pipeline's independent draw sequences.
pub mod streams {
    pub const CHAIN: u64 = 0x6368_6169_6e00_0001;
    pub const PROBE: u64 = 0x7072_6f62_6500_0002;
    pub const DEGRADE: u64 = 0x6465_6772_6100_0003;
    pub const PHANTOM: u64 = 0x7068_616e_7400_0004;
    pub const TRAIN: u64 = 0x7472_6169_6e00_0005;
}

/// SplitMix64 finalizer, used to derive well-spread seeds and stream ids.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator bound to a `(seed, stream_id)` pair.
///
/// A single instance is single-consumer. Use [`SeededRng::fork`] to obtain an
/// independent stream for another consumer.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        SeededRng {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh generator on a stream derived from this one and `tag`.
    ///
    /// Does not consume any state of `self`.
    pub fn fork(&self, tag: u64) -> SeededRng {
        let id = splitmix64(self.stream_id ^ splitmix64(tag));
        SeededRng::new(self.seed, id)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
