use rand::Rng;

use crate::error::{check_len, Result};
use crate::linalg::gemm;
use crate::param::{Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fully connected layer `y = W x + b` with `W: [out, in]`.
///
/// Inputs are row-major batches `[batch, in]`; a single vector is a batch of one.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Dense<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = T::lit((6.0 / (in_dim + out_dim) as f64).sqrt());
        Self {
            weight: Param::new(Tensor::uniform(&[out_dim, in_dim], bound, rng)),
            bias: Param::zeros(&[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Param::zeros(&[out_dim, in_dim]),
            bias: Param::zeros(&[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        check_len("dense input", x.len(), batch * self.in_dim)?;
        let mut y = Vec::with_capacity(batch * self.out_dim);
        for _ in 0..batch {
            y.extend_from_slice(self.bias.data());
        }
        gemm(
            false,
            true,
            batch,
            self.out_dim,
            self.in_dim,
            T::one(),
            x,
            self.weight.data(),
            T::one(),
            &mut y,
        );
        Ok(y)
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub fn backward(&mut self, x: &[T], grad_out: &[T], batch: usize) -> Result<Vec<T>> {
        check_len("dense input", x.len(), batch * self.in_dim)?;
        check_len("dense grad", grad_out.len(), batch * self.out_dim)?;
        gemm(
            true,
            false,
            self.out_dim,
            self.in_dim,
            batch,
            T::one(),
            grad_out,
            x,
            T::one(),
            &mut self.weight.grad,
        );
        for row in grad_out.chunks_exact(self.out_dim) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += *g;
            }
        }
        let mut dx = vec![T::zero(); batch * self.in_dim];
        gemm(
            false,
            false,
            batch,
            self.in_dim,
            self.out_dim,
            T::one(),
            grad_out,
            self.weight.data(),
            T::zero(),
            &mut dx,
        );
        Ok(dx)
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}
