use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("object map too small: {survivors} points survived filtering, need at least {required}")]
    EmptyMap { survivors: usize, required: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("not enough inliers: found {found}, need {required}")]
    InsufficientInliers { found: usize, required: usize },

    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("training diverged at step {step}: loss {loss:.6e} exceeds 1e3 x initial {initial:.6e}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("gradient check failed at seed {seed}: max relative error {error:.3e}")]
    GradientMismatch { seed: u64, error: f64 },

    #[error("no pose: {0}")]
    NoPose(String),

    #[error("zero-length mean descriptor (antipodal inputs)")]
    ZeroDescriptor,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::DimensionMismatch { .. }
                | Error::Format(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
