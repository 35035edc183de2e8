use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad flags, unreadable or invalid scenario, unwritable output.
    #[error("{0}")]
    Input(String),
    #[error("solver aborted: {0}")]
    Solver(#[from] lawn_core::Error),
}

impl AppError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Input(_) => ExitCode::from(2),
            AppError::Solver(_) => ExitCode::from(1),
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        AppError::Input(format!("{}: {e}", path.display()))
    }
}
