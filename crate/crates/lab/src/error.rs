use std::path::PathBuf;

/// Everything that can go wrong in a CLI run. Configuration problems map to
/// exit code 2, everything else to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] amprob_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn config(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        LabError::Config { path: path.into(), msg: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } | LabError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config { .. } => "config",
            LabError::Usage(_) => "usage",
            LabError::Parse { .. } => "parse",
            LabError::Io { .. } => "io",
            LabError::Format { .. } => "format",
            LabError::Core(_) => "numerics",
            LabError::Json(_) => "json",
        }
    }

    /// One-line JSON record written to stderr when a run fails.
    pub fn record(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}
