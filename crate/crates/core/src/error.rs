use thiserror::Error;

use echoloop_neural::NeuralError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid audio in {recording_id}: {detail}")]
    InvalidAudio { recording_id: String, detail: String },
    #[error("sample rate {got} Hz does not match configured {expected} Hz")]
    SampleRate { expected: u32, got: u32 },
    #[error("composition {0} has no instrument annotation")]
    MissingAnnotation(String),
    #[error("duplicate clip id {0}")]
    DuplicateClip(String),
    #[error("unknown clip {0}")]
    UnknownClip(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("rejected line: {0}")]
    RejectedLine(String),
    #[error("no catalogue clip passes the instrument mask")]
    EmptyCandidates,
    #[error("not allowed in the current mode: {0}")]
    Mode(String),
    #[error("invalid query vector: {0}")]
    InvalidQuery(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
