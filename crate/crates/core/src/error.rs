use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("rotation angle {angle} rad is within {tolerance:e} of pi; logarithm is degenerate")]
    DegenerateRotation { angle: f64, tolerance: f64 },

    #[error("time {t} is outside the valid evaluation domain [{start}, {end})")]
    OutOfDomain { t: f64, start: f64, end: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame {frame}: no valid pixels in batch")]
    EmptyBatch { frame: usize },

    #[error("non-finite loss term `{term}`{context}")]
    NonFiniteLoss { term: &'static str, context: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("camera leaves the scene bounds at frame {frame}")]
    CameraOutOfBounds { frame: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateRotation { .. }
                | Error::NonFiniteLoss { .. }
                | Error::DegenerateAlignment(_)
        )
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
