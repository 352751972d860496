use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("column `{0}` already exists")]
    Collision(String),

    #[error("scorer failed on row {row}: {message}")]
    Scoring { row: usize, message: String },

    #[error("positivity violation: the {arm} arm is empty")]
    Positivity { arm: &'static str },

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("too few rows: {0}")]
    TooFewRows(String),

    #[error("feature width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("empty selection: the mask selects no rows")]
    EmptySelection,
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for usage/configuration problems,
    /// 3 for problems with the data or the statistics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Config(_) | Error::Json(_) | Error::UnknownColumn(_) => 2,
            _ => 3,
        }
    }
}
