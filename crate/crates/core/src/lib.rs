pub mod corpus;
pub mod error;
pub mod evalsuite;
pub mod latent_gan;
pub mod pipeline;
pub mod latent;
pub mod retrieval;
pub mod session;
pub mod spec_vae;
pub mod text_cvae;

pub use error::{CoreError, Result};
pub use latent::{LatentCode, LatentDistribution, Origin, LATENT_DIM};
