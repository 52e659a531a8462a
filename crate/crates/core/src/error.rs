use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ImcError>;

#[derive(Debug, Error)]
pub enum ImcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row} is entirely -inf; every component rejects this sample")]
    DegenerateRow { row: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid data at row {row}, column {column}: {reason}")]
    InvalidData {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("normal matrix is singular; use ridge_lambda > 0")]
    RankDeficient,

    #[error("non-finite loss at optimizer step {step}")]
    Divergence { step: usize },

    #[error("every component has zero curriculum mass at iteration {iteration}")]
    TrainingCollapse { iteration: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<ImcError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ImcError {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ ImcError::AtIteration { .. } => e,
            e @ ImcError::TrainingCollapse { .. } => e,
            e => ImcError::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ImcError::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error (possibly wrapped in an iteration context) is a
    /// training collapse.
    pub fn is_collapse(&self) -> bool {
        match self {
            ImcError::TrainingCollapse { .. } => true,
            ImcError::AtIteration { source, .. } => source.is_collapse(),
            _ => false,
        }
    }
}
