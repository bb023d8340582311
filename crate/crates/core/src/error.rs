use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty source")]
    EmptySource,

    #[error("zero-area face {0}")]
    ZeroAreaFace(usize),

    #[error("object collapsed: object {0} has no faces left")]
    ObjectCollapsed(u32),

    #[error("rank deficient point set")]
    RankDeficient,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("missing history: need {needed} frames, have {available}")]
    MissingHistory { needed: usize, available: usize },

    #[error("initial interpenetration between bodies {0} and {1}")]
    Interpenetration(usize, usize),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
