use std::path::PathBuf;

/// Failures of the file-format and command layer.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("pair is unregistrable: {0}")]
    Unregistrable(String),
    #[error("self-check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] eqgs_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 usage or parse, 2 unregistrable, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use eqgs_core::Error as E;
        match self {
            CliError::Unregistrable(_) | CliError::Core(E::NoValidRows) => 2,
            CliError::CheckFailed(_)
            | CliError::Core(
                E::NonFinite { .. } | E::Diverged { .. } | E::QuaternionUnderflow(_) | E::NotARotation(_) | E::NonUnitQuaternion(_),
            ) => 3,
            _ => 1,
        }
    }
}
