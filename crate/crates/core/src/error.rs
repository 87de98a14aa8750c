use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An API precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// NaN or infinity produced where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A reduction slice with no admissible entries (all masked, zero degree, zero variance).
    #[error("degenerate slice: {0}")]
    DegenerateSlice(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("index error: {0}")]
    Index(String),

    /// Malformed input data. `row` is the 1-based line number in the source file.
    #[error("ingestion error at {file} row {row}: {message}")]
    Ingest {
        file: String,
        row: u64,
        message: String,
    },

    /// Structurally valid input that does not satisfy panel invariants.
    #[error("ingestion error: {0}")]
    Panel(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures caused by non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
