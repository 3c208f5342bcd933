use thiserror::Error;

/// Error type for parsing, validation, and generation.
#[derive(Error, Debug)]
pub enum DataError {
    /// Malformed line in a text format; `line` is 1-based.
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("missing key `{key}`")]
    MissingKey { key: String },
    /// A key exists but its value does not parse or violates an invariant.
    #[error("key `{key}`: {detail}")]
    BadValue { key: String, detail: String },
    /// Cross-field configuration problems (infeasible conflict matrix, ...).
    #[error("config: {detail}")]
    Config { detail: String },
    /// An instance violates the schema; `index` is its 0-based position.
    #[error("instance {index}: {detail}")]
    Instance { index: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
