use std::path::PathBuf;

/// Harness failure, mapped onto the process exit code by [`HarnessError::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] analog_grad_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("missing records: {0}")]
    MissingRecords(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Io { .. } | HarnessError::Data { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HarnessError::Data {
            path: path.into(),
            message: message.into(),
        }
    }
}
