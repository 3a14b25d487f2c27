//! Error type shared across the crate.

/// Crate-wide error enumeration.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dimension or pattern mismatch between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Invalid argument outside shape concerns (counts, ranges, rates).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A worker group collective was used inconsistently across ranks.
    #[error("collective protocol error: {0}")]
    Protocol(String),
    /// Strategy constraints violated (e.g. head count not divisible by p).
    #[error("configuration error: {0}")]
    Config(String),
    /// Cache handed to a backward pass does not match the gradient.
    #[error("state error: {0}")]
    State(String),
    /// Cost profile is missing coefficients or holds inconsistent ones.
    #[error("cost profile error: {0}")]
    Profile(String),
    /// Measured or ingested data fails a sanity requirement.
    #[error("data error: {0}")]
    Data(String),
    /// Malformed graph/label/profile file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
