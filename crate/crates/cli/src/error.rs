use std::path::PathBuf;

/// Exit codes: 1 runtime failure, 2 usage or config, 3 unreadable or
/// invalid input file, 4 replay mismatch, 5 a requested check failed.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] csa_core::Error),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    /// The command ran and printed its report, but a requested check failed.
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Usage(String),
    #[error("server: {0}")]
    Serve(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use csa_core::Error as E;
        match self {
            CliError::Core(E::ReplayMismatch { .. }) => 4,
            CliError::Core(
                E::Io { .. }
                | E::Parse { .. }
                | E::Json(_)
                | E::Version { .. }
                | E::Schema(_)
                | E::DemoSet(_)
                | E::Bundle(_)
                | E::Scenario(_),
            )
            | CliError::Io { .. } => 3,
            CliError::Core(E::Config(_)) | CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Check(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
