//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("state is not physical: {0}")]
    NotPhysical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nothing kept")]
    NothingKept,

    #[error("unrecoverable estimate")]
    UnrecoverableEstimate,

    #[error("filter annihilates state (pass probability {0:.3e})")]
    FilterAnnihilates(f64),

    #[error("insufficient shots: {got} per setting, need at least {need}")]
    InsufficientShots { got: u64, need: u64 },

    #[error("quota infeasible: {0}")]
    QuotaInfeasible(String),

    #[error("subsample too small for estimator ({0} entries)")]
    SubsampleTooSmall(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
