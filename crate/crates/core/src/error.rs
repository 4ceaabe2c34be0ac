use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unbound variable `{0}`")]
    Unbound(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("disconnected skeleton graph: joint {0} is unreachable")]
    Disconnected(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {what} = {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unknown emotion label `{0}`")]
    UnknownLabel(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Coarse category, used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::NonFinite(_) | Error::Degenerate(_) => ErrorKind::Numerical,
            Error::Shape { .. } | Error::Unbound(_) | Error::BackwardBeforeForward => {
                ErrorKind::Numerical
            }
            Error::Disconnected(_)
            | Error::Format(_)
            | Error::Dimension { .. }
            | Error::UnknownLabel(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Io,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
