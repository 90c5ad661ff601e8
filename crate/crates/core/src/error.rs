use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid demonstration set: {0}")]
    DemoSet(String),

    #[error("invalid bundle: {0}")]
    Bundle(String),

    #[error("unsupported {what} version {found} (this build reads {supported})")]
    Version {
        what: &'static str,
        found: String,
        supported: String,
    },

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("segmentation: {0}")]
    Segmentation(String),

    #[error("surface: {0}")]
    Surface(String),

    #[error("parameters ({u}, {v}) outside the surface domain [0,1]^2")]
    OutOfDomain { u: f64, v: f64 },

    #[error("degenerate surface partials at ({u}, {v})")]
    DegenerateFrame { u: f64, v: f64 },

    #[error("projection did not converge for point {point:?} (distance {distance:.4} m)")]
    Projection { point: [f64; 3], distance: f64 },

    #[error("dmp: {0}")]
    Dmp(String),

    #[error("quaternion group has zero norm")]
    ZeroQuaternion,

    #[error("corrections: {0}")]
    Corrections(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("session is {0}, expected running")]
    NotRunning(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("replay mismatch at tick {tick}: {detail}")]
    ReplayMismatch { tick: u64, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
