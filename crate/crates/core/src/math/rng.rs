//! Seeded, stream-addressable random numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform draws are clamped into `[UNIFORM_EPS, 1 - UNIFORM_EPS]` before any
/// log transform.
pub const UNIFORM_EPS: f64 = 1e-12;

/// A ChaCha stream identified by `(seed, stream)`. Equal identifiers give
/// bit-identical sequences regardless of thread scheduling.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on a sub-stream. Depends only on `(seed, stream, key)`,
    /// never on how much of `self` has been consumed.
    pub fn derive(&self, key: u64) -> SeededRng {
        SeededRng::new(self.seed, splitmix(self.stream ^ splitmix(key.wrapping_add(1))))
    }

    /// Derive along a path of keys, e.g. `[epoch, item]`.
    pub fn derive_path(&self, keys: &[u64]) -> SeededRng {
        keys.iter().fold(self.clone(), |r, &k| r.derive(k))
    }

    /// Uniform on the open interval, clamped away from 0 and 1.
    pub fn uniform(&mut self) -> f64 {
        let u: f64 = self.inner.random();
        u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
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

/// `-ln(-ln u)` with `u` drawn from the open unit interval.
pub fn sample_gumbel(rng: &mut SeededRng) -> f64 {
    gumbel_from_uniform(rng.uniform())
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}
