use std::path::PathBuf;

/// Errors produced by the library.
///
/// Variants are grouped so that a command-line front end can map them onto
/// distinct exit codes with [`Error::category`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sequence too short: {frames} frames, need at least {needed}")]
    SequenceTooShort { frames: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid clip: {0}")]
    InvalidClip(String),

    #[error("degenerate reference bone (mean length {0:e})")]
    DegenerateBone(f64),

    #[error("joint spec has no hand joints")]
    NoHandJoints,

    #[error("joint spec: {0}")]
    JointSpec(String),

    #[error("audio: {0}")]
    Audio(String),

    #[error("audio timeline too short: covers {audio_s:.3}s, motion needs {motion_s:.3}s")]
    AudioCoverage { audio_s: f64, motion_s: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("container {path}: {detail}")]
    Container { path: PathBuf, detail: String },

    #[error("transcript line {line}: {detail}")]
    Transcript { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorCategory::Usage,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::DegenerateBone(_) => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
