use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub(crate) first_moment: Vec<T>,
    pub(crate) second_moment: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![T::zero(); n],
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn scale_grad(&mut self, factor: T) {
        self.grad.iter_mut().for_each(|g| *g *= factor);
    }

    /// Adds `other`'s gradient into this one.
    pub fn add_grad(&mut self, other: &Param<T>) {
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += *o;
        }
    }
}

/// Anything that owns named parameters. Names are stable and are what the
/// checkpoint format keys on.
pub trait Module<T: Scalar = f32> {
    fn params(&self) -> Vec<(String, &Param<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn scale_grad(&mut self, factor: T) {
        for (_, p) in self.params_mut() {
            p.scale_grad(factor);
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn grads_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|(_, p)| p.grad.iter().all(|g| g.is_finite()))
    }

    fn values_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.value.is_finite())
    }
}

/// Prefixes every name of a sub-module's parameters.
pub fn prefixed<'a, T: Scalar>(
    prefix: &str,
    params: Vec<(String, &'a Param<T>)>,
) -> Vec<(String, &'a Param<T>)> {
    params
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}

pub fn prefixed_mut<'a, T: Scalar>(
    prefix: &str,
    params: Vec<(String, &'a mut Param<T>)>,
) -> Vec<(String, &'a mut Param<T>)> {
    params
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}
