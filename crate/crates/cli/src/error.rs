use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, flags or missing prerequisites.
    #[error("validation error: {0}")]
    Validation(String),
    /// A pipeline stage failed while running.
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn stage(stage: &str, e: impl std::fmt::Display) -> Self {
        CliError::Stage { stage: stage.to_string(), message: e.to_string() }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Stage { .. } => ExitCode::from(3),
        }
    }
}
