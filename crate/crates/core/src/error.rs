use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },

    #[error("unknown marker {0:?}")]
    UnknownMarker(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} = {value} is out of range {range}")]
    OutOfRange {
        what: &'static str,
        value: usize,
        range: String,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("marker {0} has zero probability under the current parameters")]
    ZeroProbability(usize),

    #[error("non-finite loss at EM iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("latent sense {0} has zero mass and no smoothing")]
    EmptySense(usize),

    #[error("{0}")]
    Degenerate(&'static str),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
