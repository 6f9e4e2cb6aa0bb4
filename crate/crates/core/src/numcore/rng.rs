//! Seeded randomness.
//!
//! Every stochastic choice in the toolkit draws from a [`SeededRng`], a thin
//! wrapper over ChaCha8: a counter-based stream cipher whose output is fully
//! determined by a 64-bit seed and a 64-bit stream id, identical on every
//! platform. There is no ambient global generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    seed: u64,
}

/// Creates the root generator for one run.
pub fn set_seed(seed: u64) -> SeededRng {
    SeededRng::new(seed)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named purpose, e.g. init vs. shuffling.
    ///
    /// The child depends only on the root seed and `stream`, never on how
    /// much the parent has been consumed.
    pub fn fork(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            inner,
            seed: self.seed,
        }
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Tensor with entries drawn uniformly from `[-bound, bound)`.
    pub fn uniform_tensor(&mut self, shape: impl Into<Vec<usize>>, bound: f64) -> Tensor {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.uniform(-bound, bound)).collect();
        Tensor::new(shape, data).expect("uniform_tensor: invalid shape")
    }

    pub fn normal_tensor(&mut self, shape: impl Into<Vec<usize>>, std: f64) -> Tensor {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * self.normal()).collect();
        Tensor::new(shape, data).expect("normal_tensor: invalid shape")
    }
}
