use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch: expected {expected} signs, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("known first symbol {0} is not a constellation point")]
    PilotNotInConstellation(crate::C64),

    #[error("diagonal entry {index} of T is not strictly positive ({value:e})")]
    NonpositiveDiagonal { index: usize, value: f64 },

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("column {column} of the iterate has vanishing norm")]
    ZeroColumn { column: usize },

    #[error("search space of {candidates} candidates exceeds the 2^20 limit")]
    SearchSpaceTooLarge { candidates: u128 },

    #[error("regularized Gram matrix is not positive definite")]
    SingularMatrix,

    #[error("inverse square root of non-positive value (raw {raw})")]
    DomainError { raw: i64 },

    #[error("array size N = {n} exceeds the modelled maximum of {max}")]
    ArrayTooLarge { n: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
