use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("medium generation error: {0}")]
    Media(String),

    #[error("constraint row {row} is degenerate: {reason}")]
    DegenerateConstraint { row: usize, reason: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("eigenvalue solver failure: {0}")]
    Eigen(String),

    #[error("no multicontinuum structure detected: {0}")]
    NoSpectralGap(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 validation, 2 solver failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Grid(_) | Error::Media(_) => 1,
            _ => 2,
        }
    }
}
