//! Seeded, splittable random number generation.
//!
//! Built on ChaCha8 so a seed yields the same stream on every platform.
//! `split` derives an independent child stream without advancing the parent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

pub const ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Child state keyed by `key`; distinct keys give independent streams.
    pub fn split(&self, key: u64) -> Self {
        // splitmix64 finalizer over (stream, key)
        let mut z = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(key.wrapping_add(1));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Self {
            seed: self.seed,
            stream: z,
        }
    }

    pub fn generator(&self) -> Generator {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        Generator { rng }
    }
}

pub struct Generator {
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Normal sample with standard deviation `std`, resampled until it lies within `±2·std`.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    pub fn trunc_normal_tensor<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| T::lit(self.trunc_normal(std)))
    }

    pub fn normal_tensor<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| T::lit(self.normal() * std))
    }

    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| T::lit(lo + (hi - lo) * self.uniform()))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<V>(&mut self, items: &mut [V]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
