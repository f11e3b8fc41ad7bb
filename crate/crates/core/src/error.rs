use thiserror::Error;

use crate::scheme::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scheme:\n{0}")]
    InvalidScheme(ValidationReport),
    #[error("invalid instantiation:\n{0}")]
    InvalidInstantiation(ValidationReport),
    #[error("{0}")]
    Input(String),
    #[error(
        "state space of 2^{log2_states:.2} joint assignments exceeds the cap of {cap} \
         ({variables} variables)"
    )]
    StateSpaceTooLarge {
        log2_states: f64,
        cap: u64,
        variables: usize,
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("count overflow: {0}")]
    Overflow(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for failures caused by reading or decoding files rather than by
    /// the content of a well-formed input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Json(_) | Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
