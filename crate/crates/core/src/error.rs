use thiserror::Error;

/// Errors shared across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grammar violation: {0}")]
    Grammar(String),

    #[error("incomplete expression: {0} open slot(s) remain")]
    IncompleteExpression(u32),

    #[error("arity mismatch: expected {expected} coefficients, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("library exhausted: {0}")]
    ExhaustedLibrary(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("no untried actions to expand")]
    ExhaustedExpansion,
    #[error("node is terminal: {0}")]
    TerminalNode(String),

    #[error("undefined variance: {0}")]
    UndefinedVariance(String),

    #[error("empty optimization problem")]
    EmptyProblem,

    #[error("unknown symbol id {0}")]
    Vocabulary(u16),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
