use thiserror::Error;

/// Errors raised by game construction, evaluation and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("construction error: {0}")]
    Construction(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("enumeration needs {needed} policy evaluations, exceeding the cap of {cap}")]
    EnumerationCap { needed: u128, cap: u64 },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("operation requires a potential function but none was supplied")]
    MissingPotential,

    #[error("phi_max is zero; the prescribed step sizes are undefined")]
    DegeneratePotential,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nash gap {gap:e} is below the {floor:e} floor; best-response solver inconsistency")]
    NegativeGap { gap: f64, floor: f64 },

    #[error("trace is empty")]
    EmptyTrace,

    #[error("game file error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
