use std::fmt::Display;

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input, invalid model or tangent (exit 2).
    #[error("{0}")]
    Input(String),
    /// Solver or differentiation failure (exit 3).
    #[error("{0}")]
    Solve(String),
}

impl CliError {
    pub fn input(e: impl Display) -> Self {
        CliError::Input(e.to_string())
    }

    pub fn solve(e: impl Display) -> Self {
        CliError::Solve(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solve(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
