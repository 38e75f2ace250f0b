use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vertex index {index} out of range for graph with {n} vertices")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("self loop at vertex {0}")]
    SelfLoop(usize),

    #[error("invalid receptive field: {0}")]
    InvalidReceptiveField(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("constant certification failed for {constant}: declared {declared}, observed {observed}")]
    Certification {
        constant: &'static str,
        declared: f64,
        observed: f64,
        witness: Vec<Vec<f64>>,
    },

    #[error("learner is not deterministic: {0}")]
    NonDeterministic(String),

    #[error("condition violated: {0}")]
    Condition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
