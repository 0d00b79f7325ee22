use std::path::PathBuf;

/// Errors produced by the scale-recovery library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("duplicate sibling category name {0:?}")]
    DuplicateSibling(String),
    #[error("invalid GMM: {0}")]
    InvalidGmm(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("category path is empty")]
    EmptyPath,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud has {got} points, need at least {need}")]
    CloudTooSmall { got: usize, need: usize },
    #[error("up vector is ambiguous: eigenvalue gap {gap:e} below threshold")]
    DegenerateUpVector { gap: f64 },
    #[error("points are collinear or coincident; no enclosing rectangle")]
    DegenerateRectangle,
    #[error("object box is degenerate: {0}")]
    DegenerateBox(String),

    #[error("no objects available for scale optimization")]
    NoObjects,
    #[error("invalid scale window: {0}")]
    InvalidWindow(String),
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),

    #[error("could not place {0} objects without overlap")]
    Placement(usize),
    #[error("unknown {kind} strategy {name:?} (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
