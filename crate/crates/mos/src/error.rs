pub type Result<T> = std::result::Result<T, MosError>;

#[derive(Debug, thiserror::Error)]
pub enum MosError {
    #[error("invalid study plan: {0}")]
    InvalidPlan(String),

    #[error("invalid request: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("study is fully assigned")]
    NoCapacity,

    #[error("record log {line}: {reason}")]
    CorruptLog { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MosError {
    /// Stable machine-readable code for API responses.
    pub fn code(&self) -> &'static str {
        match self {
            MosError::InvalidPlan(_) => "invalid_plan",
            MosError::Validation(_) => "validation",
            MosError::NotFound(_) => "not_found",
            MosError::Conflict(_) => "conflict",
            MosError::NoCapacity => "no_capacity",
            MosError::CorruptLog { .. } => "corrupt_log",
            MosError::Io(_) | MosError::Json(_) | MosError::Csv(_) => "internal",
        }
    }
}
