use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing {artifact}; run `eivuq {command}` first")]
    MissingArtifact { artifact: String, command: &'static str },

    #[error(transparent)]
    Core(#[from] eivuq::Error),
}

impl CliError {
    /// 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(eivuq::Error::Config(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl From<&CliError> for ExitCode {
    fn from(e: &CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}
