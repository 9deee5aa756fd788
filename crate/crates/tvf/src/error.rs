use std::process::ExitCode;

/// Failures of a command, each with a fixed process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or file format. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A file an earlier step should have produced is absent. Exit code 3.
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] tvf_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 for usage and format problems, 3 for missing inputs, 4 for
    /// non-finite numbers, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Core(tvf_core::Error::NonFinite { .. }) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}
