use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor};
use crate::error::{domain_err, Result};

/// He-normal initialization: samples from `N(0, sqrt(2 / fan_in))`.
pub fn he_init<S: Scalar>(shape: impl Into<Vec<usize>>, fan_in: usize, seed: u64) -> Result<Tensor<S>> {
    if fan_in == 0 {
        return Err(domain_err!("fan_in must be positive"));
    }
    let shape = shape.into();
    let n: usize = shape.iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| domain_err!("{e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n).map(|_| S::from_f64_lossy(normal.sample(&mut rng))).collect();
    Tensor::new(shape, data)
}
