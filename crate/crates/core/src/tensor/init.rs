//! Weight initializers.

use rand::Rng;

use super::{Element, Tensor};

/// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform<E: Element, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<E> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| E::of(rng.random_range(-bound..bound)))
}

/// Uniform on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, for layers followed by ReLU.
pub fn he_uniform<E: Element, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<E> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| E::of(rng.random_range(-bound..bound)))
}

/// Standard normal entries, used by tests and synthetic inputs.
pub fn normal<E: Element, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<E> {
    use rand_distr::{Distribution, StandardNormal};
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        E::of(z * std)
    })
}
