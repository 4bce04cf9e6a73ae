use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("series did not converge: {0}")]
    NonConvergent(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Num(#[from] gelgt_numcore::NumError),
    #[error(transparent)]
    Core(#[from] gelgt_core::CoreError),
}

pub type Result<T> = std::result::Result<T, OracleError>;
