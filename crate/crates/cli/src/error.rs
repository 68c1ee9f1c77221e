use thiserror::Error;

use deal_copula::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("inconsistent data: {0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 config, 3 data inconsistency, 4 numerical infeasibility, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::InfeasibleVariance { .. } | CoreError::Domain(_) => 4,
                CoreError::InconsistentTables(_)
                | CoreError::InfeasibleTarget { .. }
                | CoreError::Parse { .. }
                | CoreError::EmptyCell { .. }
                | CoreError::MissingOutcome(_)
                | CoreError::Portfolio(_)
                | CoreError::Shape(_)
                | CoreError::Json(_) => 3,
                CoreError::Validation(_) => 2,
                CoreError::Io { .. } => 1,
            },
        }
    }
}
