use thiserror::Error;

pub type Result<T, E = ReachError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ReachError {
    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ReachError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ReachError {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        ReachError::Dimension {
            context,
            expected,
            actual,
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &ReachError {
        match self {
            ReachError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical machinery (solver, convergence)
    /// as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            ReachError::Infeasible | ReachError::Unbounded | ReachError::Numerical(_)
        )
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| ReachError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
