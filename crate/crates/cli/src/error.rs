use thiserror::Error;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),

    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<unfold_core::Error> for CliError {
    fn from(e: unfold_core::Error) -> Self {
        match e {
            unfold_core::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Attaches a path to I/O-style failures.
pub fn at_path<E: std::fmt::Display>(path: &std::path::Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}
