use rand::Rng;

use super::{Scalar, Tensor};
use crate::seed;

/// Glorot-uniform `fan_in × fan_out` weight, `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut seed::Rng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::of(rng.random_range(-a..a))).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("dims match")
}

pub fn zeros<T: Scalar>(shape: Vec<usize>) -> Tensor<T> {
    Tensor::zeros(shape)
}
