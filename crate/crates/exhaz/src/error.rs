use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside a function's mathematical domain (t <= 0, p outside (0,1), ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input (bad parameter values, impossible configuration).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Region graph violates its invariants (self loop, disconnected, out of range).
    #[error("graph error: {0}")]
    Graph(String),

    /// Life-table lookup failed; the message names the offending stratum key.
    #[error("life table: {0}")]
    LifeTable(String),

    /// A likelihood or gradient evaluation produced a nonfinite intermediate.
    #[error("numerical failure at record {record}: {message}")]
    Numerical { record: usize, message: String },

    /// Configuration file is invalid or references missing inputs.
    #[error("config error: {0}")]
    Config(String),

    /// Row-level parse failure in an input file.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// The sampler could not make progress (persistent divergence, bad init).
    #[error("sampler error (chain {chain}): {message}")]
    Sampler { chain: usize, message: String },

    /// Convergence diagnostics failed a hard threshold.
    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Invalid(_) | Error::Io(_) => 2,
            Error::Convergence(_) => 4,
            _ => 3,
        }
    }
}
