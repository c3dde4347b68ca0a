use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ray has no surface intersection within range")]
    NoSurface,

    #[error("no valid view observes the query point")]
    NoEvidence,

    #[error("non-finite value in {layer}")]
    NumericFailure { layer: String },

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("view-set sampling failed: {0}")]
    SamplingFailure(String),

    #[error("overlap undefined: source view has no hit pixels")]
    UndefinedOverlap,

    #[error("no camera pair has overlapping points")]
    NoOverlap,

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
