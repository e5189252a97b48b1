use thiserror::Error;

/// Errors produced by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("variable {var} appears more than once in the scope of factor {factor}")]
    DuplicateVariable { factor: usize, var: usize },
    #[error("factor {factor} references undeclared variable {var}")]
    UnknownVariable { factor: usize, var: usize },
    #[error("variable ids must be contiguous from 0, found id {found} at position {expected}")]
    NonContiguousVariables { expected: usize, found: usize },
    #[error("factor ids must be contiguous from 0, found id {found} at position {expected}")]
    NonContiguousFactors { expected: usize, found: usize },
    #[error("variable {var} has cardinality {cardinality}, must be at least 2")]
    BadCardinality { var: usize, cardinality: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("factor {factor} has a negative or non-finite potential entry {value}")]
    InvalidPotential { factor: usize, value: f64 },
    #[error("factor {factor} has arity {arity}, exceeding the maximum of {max}")]
    ArityExceeded { factor: usize, arity: usize, max: usize },
    #[error("isomorphism does not match the graph: {0}")]
    IsomorphismMismatch(String),
    #[error("state space of {size} exceeds the enumeration cap {cap}")]
    CapExceeded { size: f64, cap: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("value {value} out of range for variable {var} with cardinality {cardinality}")]
    ValueOutOfRange { var: usize, value: usize, cardinality: usize },
    #[error("every partition is zero")]
    AllZeroPartitions,
    #[error("DIMACS parse error on line {line}: {message}")]
    Dimacs { line: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss on instance {instance} at epoch {epoch}")]
    NonFiniteLoss { instance: usize, epoch: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
