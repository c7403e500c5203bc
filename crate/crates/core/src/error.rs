use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported feature: {0}")]
    Unsupported(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("missing element: {0}")]
    MissingElement(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix construction error: {0}")]
    Construction(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("observability error: {0}")]
    Observability(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Unsupported(_) => "unsupported",
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Partition(_) => "partition",
            Error::MissingElement(_) => "missing_element",
            Error::Domain(_) => "domain",
            Error::Construction(_) => "construction",
            Error::Numerical(_) => "numerical",
            Error::Observability(_) => "observability",
            Error::Protocol(_) => "protocol",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Schema(err.to_string())
    }
}
