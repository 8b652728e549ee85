use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("archive format error{}: {detail}", entry.as_ref().map(|e| format!(" at entry `{e}`")).unwrap_or_default())]
    Format {
        entry: Option<String>,
        detail: String,
    },

    #[error("truncated archive{}: needed {needed} bytes, {available} available", entry.as_ref().map(|e| format!(" at entry `{e}`")).unwrap_or_default())]
    Truncated {
        entry: Option<String>,
        needed: usize,
        available: usize,
    },

    #[error("layout mismatch at entry `{entry}`: {detail}")]
    Layout { entry: String, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss in {stage} (epoch {epoch}, batch {batch}): {value}")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Stable machine-readable code used on the command line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "SHAPE_MISMATCH",
            Error::Format { .. } => "BAD_FORMAT",
            Error::Truncated { .. } => "TRUNCATED",
            Error::Layout { .. } => "LAYOUT_MISMATCH",
            Error::Contract(_) => "CONTRACT_VIOLATION",
            Error::NonFinite { .. } => "NON_FINITE_LOSS",
            Error::Config(_) => "INVALID_CONFIG",
            Error::FileNotFound(_) => "FILE_NOT_FOUND",
            Error::Io(_) => "IO_ERROR",
            Error::Json(_) => "JSON_ERROR",
            Error::Csv(_) => "CSV_ERROR",
        }
    }

    /// Validation errors are the caller's fault; everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::FileNotFound(_) | Error::Format { .. } | Error::Truncated { .. }
        )
    }
}
