use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum EmaqError {
    /// Shapes or required structure do not line up (e.g. policy vs MDP dims).
    #[error("structural error: {0}")]
    Structural(String),

    /// Values are the right shape but violate an invariant (probabilities,
    /// finiteness, ranges).
    #[error("validation error: {0}")]
    Validation(String),

    /// A fixed-point iteration failed to converge within its iteration cap,
    /// or the residual grew for too many consecutive sweeps.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Invalid configuration (hyperparameters out of range, missing inputs).
    #[error("configuration error: {0}")]
    Config(String),

    /// A precondition of an operation does not hold (e.g. behavior policy
    /// must have full support for theorem checks).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Training produced a non-finite loss or gradient.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents, with location context where available.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, EmaqError>;
