use std::path::PathBuf;

/// Process exit statuses of the CLI.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// A bad or inconsistent configuration value; `path` is the dotted field path.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(cldlab_core::Error),
    #[error(transparent)]
    Core(cldlab_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn config(path: impl Into<String>, message: impl std::fmt::Display) -> Self {
        HarnessError::Config { path: path.into(), message: message.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<cldlab_core::Error> for HarnessError {
    fn from(e: cldlab_core::Error) -> Self {
        match e {
            cldlab_core::Error::NonFiniteActivation(_) => HarnessError::Numeric(e),
            other => HarnessError::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
