use setfuse_core::FusionError;
use thiserror::Error;

/// Failure of a CLI command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad scenario, model parameters or I/O.
    #[error("{0}")]
    Input(String),
    /// Fusion or weight selection failed on valid inputs.
    #[error("solver error: {0}")]
    Solver(#[from] FusionError),
}

impl CliError {
    /// Model construction errors are input errors.
    pub fn model(e: FusionError) -> Self {
        CliError::Input(format!("invalid model: {e}"))
    }

    pub fn io(what: &str, e: std::io::Error) -> Self {
        CliError::Input(format!("{what}: {e}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}
