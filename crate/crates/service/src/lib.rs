pub mod client;
pub mod config;
pub mod engine;
pub mod http;
pub mod hub;
pub mod protocol;
pub mod server;

pub use config::ServiceConfig;
pub use server::{serve, serve_models, ServiceHandle};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] echoloop_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
