use rand::Rng;

use crate::error::{NeuralError, Result};
use crate::param::{Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lookup table `[vocab, dim]`.
#[derive(Debug, Clone)]
pub struct Embedding<T: Scalar = f32> {
    pub table: Param<T>,
    pub vocab: usize,
    pub dim: usize,
}

impl<T: Scalar> Embedding<T> {
    pub fn new<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            table: Param::new(Tensor::randn(&[vocab, dim], T::lit(0.1), rng)),
            vocab,
            dim,
        }
    }

    pub fn lookup(&self, id: usize) -> Result<&[T]> {
        if id >= self.vocab {
            return Err(NeuralError::Domain(format!(
                "token id {id} outside vocabulary of {}",
                self.vocab
            )));
        }
        Ok(&self.table.data()[id * self.dim..(id + 1) * self.dim])
    }

    pub fn accumulate(&mut self, id: usize, grad: &[T]) {
        let row = &mut self.table.grad[id * self.dim..(id + 1) * self.dim];
        for (r, g) in row.iter_mut().zip(grad) {
            *r += *g;
        }
    }
}

impl<T: Scalar> Module<T> for Embedding<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("table".into(), &self.table)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("table".into(), &mut self.table)]
    }
}
