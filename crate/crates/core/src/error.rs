use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("empty tree")]
    EmptyTree,

    #[error("no trees to merge")]
    NothingToMerge,

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("subset {0} missing from characteristic table")]
    MissingSubset(String),

    #[error("{what} with d = {d} exceeds the enumeration limit of {limit}")]
    TooLarge { what: &'static str, d: usize, limit: usize },

    #[error("oracle error{}: {message}", .query.map(|q| format!(" (query {q})")).unwrap_or_default())]
    Oracle { query: Option<u64>, message: String },

    #[error("non-finite score {value} for {context}")]
    NonFinite { value: f64, context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn oracle(query: Option<u64>, message: impl Into<String>) -> Self {
        Error::Oracle { query, message: message.into() }
    }
}
