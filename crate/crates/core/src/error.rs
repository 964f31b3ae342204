use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed triple at line {line}: {message}")]
    MalformedTriple { line: usize, message: String },

    #[error("malformed alias at line {line}: {message}")]
    MalformedAlias { line: usize, message: String },

    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unsupported construct at offset {offset}: {message}")]
    Unsupported { offset: usize, message: String },

    #[error("invalid logical form: {0}")]
    InvalidLogicalForm(String),

    #[error("unorderable values bound to ?{var}")]
    Unorderable { var: String },

    #[error("invalid world config: {0}")]
    InvalidConfig(String),

    #[error("split constraint unsatisfiable: {0}")]
    UnsatisfiableSplit(String),

    #[error("untrainable dataset: {0}")]
    Untrainable(String),

    #[error("stale vector cache: memory encoded with {memory}, encoder is {encoder}; re-encode the memory")]
    StaleCache { memory: String, encoder: String },

    #[error("duplicate case id {0}")]
    DuplicateCase(String),

    #[error("unknown case id {0}")]
    UnknownCase(String),

    #[error("corrupt file at offset {offset}: {message}")]
    Corrupt { offset: u64, message: String },

    #[error("no cases to reuse")]
    NoCasesToReuse,

    #[error("component version mismatch: {0}")]
    VersionMismatch(String),

    #[error("split kind mismatch: experiment needs {expected}, dataset is {found}")]
    SplitMismatch { expected: String, found: String },

    #[error("{0}")]
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
