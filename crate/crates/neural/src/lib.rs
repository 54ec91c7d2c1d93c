//! Minimal differentiable building blocks for the echoloop models.
//!
//! There is no autodiff graph here. Every layer exposes an explicit
//! `forward` that returns whatever it needs to cache and a `backward` that
//! consumes that cache, accumulates parameter gradients and returns the
//! gradient with respect to its input. The three models in `echoloop-core`
//! are wired by hand on top of these pieces.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod lstm;
pub mod opcheck;
pub mod optim;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use conv::{Conv2d, ConvTranspose2d};
pub use dense::Dense;
pub use embedding::Embedding;
pub use error::{NeuralError, Result};
pub use gradcheck::{grad_check, GradReport};
pub use lstm::{Lstm, LstmState};
pub use optim::Adam;
pub use param::{Module, Param};
pub use rng::SessionRng;
pub use scalar::Scalar;
pub use tensor::Tensor;
