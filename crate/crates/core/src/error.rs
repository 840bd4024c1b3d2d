use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on arguments was violated (dimensions, ranges, orders).
    #[error("invalid input: {0}")]
    Input(String),

    /// Malformed model file or CSV.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A dense materialization would exceed the configured size cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// The lifted state lost its internal consistency (e.g. the constant block drifted from 1).
    #[error("inconsistent lifted state: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
