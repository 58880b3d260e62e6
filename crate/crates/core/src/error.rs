use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid frame, window or hop configuration.
    #[error("invalid frame configuration: {0}")]
    Frame(String),

    /// Tensor or signal dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input signal too short to hold a single analysis frame.
    #[error("signal of {len} samples is shorter than one frame ({frame_len})")]
    SignalTooShort { len: usize, frame_len: usize },

    /// A covariance, curvature or scale degenerated beyond what loading can fix.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The loudspeaker reference carries no energy.
    #[error("no loudspeaker excitation")]
    NoExcitation,

    /// Ground-truth mixing parameters are required but absent.
    #[error("ground-truth mixing parameters unavailable")]
    TruthUnavailable,

    /// User supplied configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingFile(_) | Error::Json(_) | Error::Frame(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
