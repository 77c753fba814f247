use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("sampling failed: {0}")]
    SamplingFailure(String),

    #[error("synchronization failed: zero-variance signal in correlation window")]
    SyncFailure,

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("checkpoint: bad magic bytes")]
    CheckpointBadMagic,

    #[error("checkpoint: unsupported format version {0}")]
    CheckpointUnsupportedVersion(u32),

    #[error("checkpoint: file truncated")]
    CheckpointTruncated,

    #[error("checkpoint: CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CheckpointCrcMismatch { stored: u32, computed: u32 },

    #[error("checkpoint: tensor layout inconsistent with config: {0}")]
    CheckpointShape(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
