use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("concept {concept} is not applicable to object {shape}")]
    Applicability { concept: String, shape: String },

    #[error("sampler failed after {attempts} attempts: {what}")]
    Sampler { what: String, attempts: usize },

    #[error("occlusion reject: {object} has {visible} visible points (need {required})")]
    OcclusionReject {
        object: &'static str,
        visible: usize,
        required: usize,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
