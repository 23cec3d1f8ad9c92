use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A covariance failed Cholesky factorization even after one jitter retry.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The fused cardinality PMF has no mass left (every term underflowed).
    #[error("fusion degenerate: fused cardinality distribution has zero mass")]
    FusionDegenerate,

    #[error("registration unavailable: {0}")]
    RegistrationUnavailable(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
