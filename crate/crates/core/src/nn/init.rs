//! Parameter initialization. Every tensor comes back grad-tracked.

use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn fan_in_uniform<E: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<E> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    uniform_init(shape, bound, rng)
}

pub fn uniform_init<E: Element>(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor<E> {
    let numel: usize = shape.iter().product();
    let data: Vec<E> = (0..numel)
        .map(|_| E::from_f64(rng.uniform_in(-bound, bound)))
        .collect();
    Tensor::from_vec(data, shape).expect("init shape").tracked()
}

pub fn normal_init<E: Element>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<E> {
    let numel: usize = shape.iter().product();
    let data: Vec<E> = (0..numel).map(|_| E::from_f64(std * rng.normal())).collect();
    Tensor::from_vec(data, shape).expect("init shape").tracked()
}

/// Standard-normal tensor (not grad-tracked); the reparameterization
/// and diffusion noise source.
pub fn randn<E: Element>(shape: &[usize], rng: &mut Rng) -> Tensor<E> {
    let numel: usize = shape.iter().product();
    let data: Vec<E> = (0..numel).map(|_| E::from_f64(rng.normal())).collect();
    Tensor::from_vec(data, shape).expect("randn shape")
}
