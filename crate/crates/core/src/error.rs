use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// `alpha0^2 + e' Sigma e >= 1` for some attribute vector, so the
    /// idiosyncratic variance would be non-positive.
    #[error("infeasible variance for attribute vector {attributes}: alpha0^2 + e'Se = {kernel:.6} >= 1")]
    InfeasibleVariance { attributes: String, kernel: f64 },

    #[error("inconsistent tables: {0}")]
    InconsistentTables(String),

    #[error("population target infeasible; violated cells: {}", cells.join(", "))]
    InfeasibleTarget { cells: Vec<String> },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no eligible deal pairs for cell ({u}, {v})")]
    EmptyCell { u: String, v: String },

    #[error("missing outcome for deal {0}")]
    MissingOutcome(u64),

    #[error("portfolio construction failed: {0}")]
    Portfolio(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
