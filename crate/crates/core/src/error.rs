use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid element {element}: {reason}")]
    InvalidElement { element: usize, reason: String },

    #[error("unsupported dimension {0} (only 1 and 2 are implemented)")]
    UnsupportedDimension(usize),

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    #[error("patch solver failure at vertex {vertex}: {reason} (condition estimate {condition:.3e})")]
    PatchSolverFailure {
        vertex: usize,
        reason: String,
        condition: f64,
    },

    #[error("eigenvalue oracle failure: {0}")]
    OracleFailure(String),

    #[error("exact solution required but not supplied")]
    MissingExactSolution,

    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
