use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid layer geometry: {0}")]
    Geometry(String),
    #[error("value outside domain: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NeuralError> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(NeuralError::ShapeMismatch {
            context,
            left: vec![got],
            right: vec![want],
        });
    }
    Ok(())
}
