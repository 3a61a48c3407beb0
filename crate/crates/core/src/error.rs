use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum GraeError {
    #[error("empty matrix")]
    EmptyMatrix,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("singular design")]
    SingularDesign,

    #[error("isolated point {0}: kernel row sums to zero")]
    IsolatedPoint(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GraeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GraeError::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GraeError::ShapeMismatch(msg.into())
    }

    /// True for failures that originate in the numerical pipeline rather
    /// than in user input (config, files, parameters).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            GraeError::Numeric(_)
                | GraeError::SingularDesign
                | GraeError::IsolatedPoint(_)
                | GraeError::Degenerate(_)
                | GraeError::Asymmetric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, GraeError>;
