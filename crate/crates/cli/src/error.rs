use conformal_reach::ReachError;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Reach(#[from] ReachError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Reach(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Reach(e) if matches!(e.root(), ReachError::Domain(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
