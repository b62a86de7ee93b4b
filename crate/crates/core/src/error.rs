use std::path::PathBuf;

/// Errors raised by case ingestion, analysis and export.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid case: {}", .0.join("; "))]
    InvalidCase(Vec<String>),

    #[error("no branches")]
    NoBranches,

    #[error("unknown branch id {0}")]
    UnknownBranch(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular susceptance matrix in island containing bus {0}")]
    SingularSusceptance(u32),

    #[error("no samples")]
    EmptyBatch,

    #[error("case mismatch: expected {expected}, found {found}")]
    CaseMismatch { expected: String, found: String },

    #[error("rank window {start}..{end} out of range for {len} branches")]
    WindowOutOfRange { start: usize, end: usize, len: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
