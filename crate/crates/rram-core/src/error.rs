use thiserror::Error;

/// Errors raised by construction, kernels, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of two objects do not conform.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An input violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A retraction produced no singular value above the truncation floor.
    #[error("degenerate retraction: all singular values vanished")]
    DegenerateRetraction,

    /// The rank-increase direction vanishes on the observed set, so the
    /// exact line search has a zero denominator.
    #[error("no observable direction: correction vanishes on the sample set")]
    NoObservableDirection,

    /// Text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
