//! Deterministic random-number streams.
//!
//! Every stochastic component draws from an [`RngStream`] identified by a
//! `(seed, stream_id)` pair, so any experiment is reproducible from its
//! manifest and independent components never share a sequence.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A seeded, stream-addressed random number generator.
///
/// Identical `(seed, stream_id)` pairs yield identical draw sequences;
/// distinct stream ids yield independent sequences under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream under the same seed; draw state is not shared.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        Normal::new(0.0, 1.0).unwrap().sample(&mut self.rng)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        Uniform::new(lo, hi).sample(&mut self.rng)
    }

    /// Uniform integer from `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Vector of i.i.d. standard normal entries.
    pub fn normal_vector(&mut self, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.normal())
    }

    /// Matrix of i.i.d. standard normal entries.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| self.normal())
    }

    /// Matrix of i.i.d. uniform entries from `[lo, hi)`.
    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        let dist = Uniform::new(lo, hi);
        DMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut self.rng))
    }
}
