use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the toolkit.
///
/// Variants are grouped by the kind of failure rather than by module so that
/// callers (notably the CLI) can map them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("harmonization error: {0}")]
    Harmonization(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("vectorizer error: {0}")]
    Vectorizer(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("resampling error: {0}")]
    Resampling(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("model integrity error: {0}")]
    ModelIntegrity(String),

    #[error("complexity guard: {0}")]
    Complexity(String),

    #[error("search error: {0}")]
    Search(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
