use thiserror::Error;

/// Errors raised by the filters and their numerical building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is singular or not positive definite: {0}")]
    SingularMatrix(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("mean parameter outside the family domain: {0}")]
    DomainError(String),
    #[error("observation outside the family support: {0}")]
    OutOfSupport(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("positive definiteness lost at t = {t}: {what}")]
    PositivityLost { t: f64, what: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    /// True for failures caused by the numerics rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix(_)
                | Error::NonFinite(_)
                | Error::DomainError(_)
                | Error::PositivityLost { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
