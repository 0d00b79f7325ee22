use std::fmt;

use metriscale::pipeline::{Stage, StageError};
use metriscale::Error;

pub const OK: i32 = 0;
pub const OTHER: i32 = 1;
/// Also what clap uses for usage errors.
pub const USAGE: i32 = 2;
pub const IO_ERROR: i32 = 3;
pub const NO_OBJECTS: i32 = 4;
pub const DEGENERATE_UP: i32 = 5;
pub const INVALID_INPUT: i32 = 6;

pub fn code_for(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => IO_ERROR,
        Error::NoObjects => NO_OBJECTS,
        Error::DegenerateUpVector { .. } => DEGENERATE_UP,
        Error::Parse(_)
        | Error::InvalidInput(_)
        | Error::InvalidParameter(_)
        | Error::InvalidWindow(_)
        | Error::UnknownStrategy { .. }
        | Error::UnknownCategory(_)
        | Error::EmptyPath
        | Error::DimensionMismatch { .. }
        | Error::TooFewSamples { .. }
        | Error::DuplicateSibling(_)
        | Error::InvalidGmm(_)
        | Error::NonPositiveScale(_) => INVALID_INPUT,
        _ => OTHER,
    }
}

/// A failure with the stage it happened in and the process exit code.
#[derive(Debug)]
pub struct AppError {
    pub stage: String,
    pub message: String,
    pub code: i32,
}

impl AppError {
    pub fn new(stage: impl fmt::Display, e: Error) -> Self {
        Self {
            stage: stage.to_string(),
            message: e.to_string(),
            code: code_for(&e),
        }
    }

    pub fn usage(stage: impl fmt::Display, message: impl Into<String>) -> Self {
        Self {
            stage: stage.to_string(),
            message: message.into(),
            code: INVALID_INPUT,
        }
    }
}

impl From<StageError> for AppError {
    fn from(e: StageError) -> Self {
        AppError::new(e.stage, e.source)
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

pub trait Staged<T> {
    fn stage(self, stage: Stage) -> Result<T, AppError>;
    fn step(self, step: &str) -> Result<T, AppError>;
}

impl<T> Staged<T> for metriscale::Result<T> {
    fn stage(self, stage: Stage) -> Result<T, AppError> {
        self.map_err(|e| AppError::new(stage, e))
    }

    fn step(self, step: &str) -> Result<T, AppError> {
        self.map_err(|e| AppError::new(step, e))
    }
}
