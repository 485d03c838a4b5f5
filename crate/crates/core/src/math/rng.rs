//! Seedable random source.
//!
//! Backed by ChaCha8 (`rand_chacha`) seeded through `seed_from_u64`, so a
//! given seed reproduces the same stream on every platform for a fixed
//! version of this crate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this source's seed and `stream`.
    ///
    /// Does not advance `self`, so forking is order-independent.
    pub fn fork(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            rng,
        }
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        if low == high {
            return low;
        }
        self.rng.random_range(low..high)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.rng.random_bool(0.5)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> Result<f64> {
        Ok(self.gaussian_sample(mean, std, 1)?[0])
    }

    /// `n` draws from N(mean, std²). `std == 0` yields `mean` exactly.
    pub fn gaussian_sample(&mut self, mean: f64, std: f64, n: usize) -> Result<Vec<f64>> {
        if !std.is_finite() || std < 0.0 || !mean.is_finite() {
            return Err(Error::domain(format!(
                "gaussian needs finite mean and std >= 0, got mean={mean}, std={std}"
            )));
        }
        if std == 0.0 {
            return Ok(vec![mean; n]);
        }
        let normal = Normal::new(mean, std).map_err(|e| Error::domain(e.to_string()))?;
        Ok((0..n).map(|_| normal.sample(&mut self.rng)).collect())
    }
}

/// Free-function form of [`RandomSource::gaussian_sample`].
pub fn gaussian_sample(rng: &mut RandomSource, mean: f64, std: f64, n: usize) -> Result<Vec<f64>> {
    rng.gaussian_sample(mean, std, n)
}
