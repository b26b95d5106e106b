//! Crate-wide error type with exit-code classification for the CLI.

use crate::kernel::Side;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, DgciError>;

/// Coarse error class used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or arguments (exit code 2).
    Config,
    /// Malformed or unusable input data (exit code 3).
    Data,
    /// Numerical failure during estimation (exit code 4).
    Numerical,
}

#[derive(Debug, Error)]
pub enum DgciError {
    #[error("no observation receives positive kernel weight at t = {t} ({side:?} side, h = {h})")]
    EmptyWindow { t: f64, side: Side, h: f64 },

    #[error("CLIME constraint set is empty for column {column} (lambda = {lambda})")]
    Infeasible { column: usize, lambda: f64 },

    #[error("CLIME solver for column {column} did not converge within {iterations} iterations")]
    NonConvergence { column: usize, iterations: usize },

    #[error("de-bias denominator for column {column} is {value:e}, below the floor {floor:e}")]
    DegenerateDenominator { column: usize, value: f64, floor: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("scenario generation failed after {attempts} attempts: {reason}")]
    RetryExhausted { attempts: usize, reason: String },

    #[error("penalty rule requires n*p/sqrt(h) > 1, got {value}")]
    NonPositiveLogArg { value: f64 },

    #[error("estimation failed at grid time {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<DgciError>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("time value {value} at line {line} is outside the open interval (0, 1)")]
    OutOfRangeTime { line: usize, value: f64 },

    #[error("dataset needs at least {min} rows, found {found}")]
    TooFewRows { min: usize, found: usize },

    #[error("dataset needs at least {min} variable columns, found {found}")]
    TooFewColumns { min: usize, found: usize },

    #[error("non-finite value in dataset at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("schema version mismatch: file has {found}, this build reads {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DgciError {
    pub fn class(&self) -> ErrorClass {
        use DgciError::*;
        match self {
            Config(_) | NonPositiveLogArg { .. } => ErrorClass::Config,
            Parse { .. }
            | OutOfRangeTime { .. }
            | TooFewRows { .. }
            | TooFewColumns { .. }
            | NonFinite { .. }
            | SchemaVersion { .. }
            | Io(_)
            | Json(_)
            | Csv(_) => ErrorClass::Data,
            EmptyWindow { .. }
            | Infeasible { .. }
            | NonConvergence { .. }
            | DegenerateDenominator { .. }
            | NotSpd
            | RetryExhausted { .. } => ErrorClass::Numerical,
            AtTime { source, .. } => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }

    pub(crate) fn at_time(self, t: f64) -> DgciError {
        DgciError::AtTime {
            t,
            source: Box::new(self),
        }
    }
}
