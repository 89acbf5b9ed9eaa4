//! Parameter initializers.

use rand::Rng;

use crate::Tensor;

pub fn zeros(rows: usize, cols: usize) -> Tensor {
    Tensor::zeros((rows, cols))
}

pub fn constant(rows: usize, cols: usize, value: f64) -> Tensor {
    Tensor::from_elem((rows, cols), value)
}

pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

/// Glorot/Xavier uniform initialization for a `fan_in × fan_out` weight.
pub fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(fan_in, fan_out, bound, rng)
}

/// He-style uniform initialization used for rectified layers; `fan_in`
/// counts every input that feeds one output (kernel × channels for convs).
pub fn he<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(rows, cols, bound, rng)
}
