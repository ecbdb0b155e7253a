use alloc::string::String;

/// Failures surfaced by the simulator core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain the operation accepts.
    #[error("rejected input: {0}")]
    InvalidInput(String),
    /// The data cannot support the requested statistic (e.g. zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Too few samples to fit a model.
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    /// Two arrays that must agree in shape do not.
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: alloc::vec::Vec<usize>,
        got: alloc::vec::Vec<usize>,
    },
    /// An operation was invoked on an object in the wrong state.
    #[error("invalid state: {0}")]
    State(String),
    /// A gradient or activation became NaN or infinite.
    #[error("non-finite values in tensor `{0}`")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
