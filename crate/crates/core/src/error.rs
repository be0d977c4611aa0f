use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed document: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("unknown document id `{0}`")]
    UnknownDocument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch for `{id}`: expected {expected}, got {got}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },

    #[error("unknown negative type `{0}`")]
    UnknownNegativeType(String),

    #[error("non-finite {what} in epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("unembeddable query `{0}`: no in-vocabulary tokens")]
    Unembeddable(String),

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
