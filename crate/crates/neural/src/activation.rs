//! Elementwise activations. Backward helpers take the forward *output*
//! where the derivative is expressible through it.

use rand::Rng;

use crate::scalar::Scalar;

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// `grad *= 1[y > 0]` for a ReLU output `y`.
pub fn relu_backward<T: Scalar>(y: &[T], grad: &mut [T]) {
    for (g, &v) in grad.iter_mut().zip(y) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = sigmoid(*v));
}

pub fn sigmoid_backward<T: Scalar>(y: &[T], grad: &mut [T]) {
    for (g, &v) in grad.iter_mut().zip(y) {
        *g *= v * (T::one() - v);
    }
}

pub fn tanh_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward<T: Scalar>(y: &[T], grad: &mut [T]) {
    for (g, &v) in grad.iter_mut().zip(y) {
        *g *= T::one() - v * v;
    }
}

pub fn leaky_relu_inplace<T: Scalar>(x: &mut [T], slope: T) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v *= slope
        }
    });
}

pub fn leaky_relu_backward<T: Scalar>(y: &[T], grad: &mut [T], slope: T) {
    for (g, &v) in grad.iter_mut().zip(y) {
        if v < T::zero() {
            *g *= slope;
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    log_softmax(logits).into_iter().map(T::exp).collect()
}

/// Inverted dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f32, rng: &mut R) -> Vec<f32> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep })
        .collect()
}
