use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid architecture at layer {layer}: {reason}")]
    InvalidArchitecture { layer: usize, reason: String },

    #[error("catalog entry `{id}`: {reason}")]
    Catalog { id: String, reason: String },

    #[error("no valid insertion location: {0}")]
    NoValidLocation(String),

    #[error("degenerate target `{0}`")]
    DegenerateTarget(String),

    #[error("target out of bounds: {0}")]
    OutOfBounds(String),

    #[error("infeasible probe: {0}")]
    InfeasibleProbe(String),

    #[error("record for probe `{probe_id}` rejected: {reason}")]
    Protocol { probe_id: String, reason: String },

    #[error("mask size mismatch: {expected:?} vs {found:?}")]
    MaskMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("IoU undefined: both masks are empty")]
    UndefinedIou,

    #[error("cell {0} has no probes")]
    EmptyCell(String),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{location}: {source}")]
    Json {
        location: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {message}", path.display())]
    Toml { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(location: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            location: location.into(),
            source,
        }
    }

    pub(crate) fn protocol(probe_id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Protocol {
            probe_id: probe_id.into(),
            reason: reason.into(),
        }
    }

    /// Whether the error stems from bad user input rather than a harness fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidArchitecture { .. }
                | Error::Catalog { .. }
                | Error::NoValidLocation(_)
                | Error::DegenerateTarget(_)
                | Error::OutOfBounds(_)
                | Error::Protocol { .. }
                | Error::MaskMismatch { .. }
                | Error::UnknownMetric(_)
                | Error::MissingArtifact { .. }
                | Error::Config(_)
                | Error::Json { .. }
                | Error::Toml { .. }
        )
    }
}
