//! Reproducible Gaussian noise streams.
//!
//! Every stream is a ChaCha20 generator keyed by the run seed and addressed by
//! a 64-bit stream id, so per-sample streams are independent of each other and
//! of the order in which samples are processed.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Source of standard normal draws.
pub trait Gaussian {
    fn fill(&mut self, out: &mut [f64]);

    fn vector(&mut self, d: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        self.fill(v.as_mut_slice());
        v
    }
}

/// Address of a noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseSource {
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A child stream, e.g. one per sample or per noise role.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    pub fn stream(&self) -> NoiseStream {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        NoiseStream { rng }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl Gaussian for NoiseStream {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.rng.sample(StandardNormal);
        }
    }
}

/// Always returns zeros; used for noiseless ablations.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl Gaussian for ZeroNoise {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}
