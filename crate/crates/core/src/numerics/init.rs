use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::numerics::Tensor;

/// Glorot-uniform `fan_in×fan_out` weight matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
    let values = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(fan_in, fan_out, values).expect("positive fan sizes")
}
