use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The requested work exceeds a configured limit. Nothing was computed.
    #[error("refused: {what} needs {required} but the limit is {limit}")]
    Refused {
        what: String,
        required: u64,
        limit: u64,
    },

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("invalid local score cache: {0}")]
    Cache(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn is_refusal(&self) -> bool {
        matches!(self, Error::Refused { .. })
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let row = err.position().map(|p| p.line() as usize).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => Error::Parse {
                row,
                msg: format!("expected {expected_len} fields, found {len}"),
            },
            other => Error::Parse {
                row,
                msg: format!("{other:?}"),
            },
        }
    }
}
