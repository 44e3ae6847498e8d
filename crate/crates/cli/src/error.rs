use thiserror::Error;

/// Errors surfaced by the command layer, each with a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::File { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn file(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::File {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<raresir_core::Error> for CliError {
    fn from(e: raresir_core::Error) -> Self {
        use raresir_core::Error as E;
        match e {
            E::Domain(_) => CliError::Usage(e.to_string()),
            E::InsufficientData(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
