use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Seeded weight initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Tensor::from_vec(shape, data)
    }

    /// Glorot-uniform for a `[in, out]` matrix.
    pub fn xavier(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(&[fan_in, fan_out], bound)
    }

    /// He-uniform for an `[out, in, kh, kw]` kernel.
    pub fn conv(&mut self, out: usize, inp: usize, k: usize) -> Tensor {
        let fan_in = inp * k * k;
        let bound = (6.0 / fan_in as f64).sqrt();
        self.uniform(&[out, inp, k, k], bound)
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}
