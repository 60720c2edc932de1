use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },

    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid value {value} for {name}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("not a probability vector")]
    InvalidProbabilities,

    #[error("cannot select {requested} samples from a pool of {available}")]
    BudgetExceedsPool { requested: usize, available: usize },

    #[error("pool index {index} out of range for pool of {len}")]
    PoolIndexOutOfRange { index: usize, len: usize },

    #[error("pool index {0} is already annotated")]
    AlreadyAnnotated(usize),
}
