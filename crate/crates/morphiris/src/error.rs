use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Failures carry enough context to identify the
/// offending stage, file, or value without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pgm parse error at byte {offset}: {reason}")]
    PgmParse { offset: usize, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("segmentation failure: {0}")]
    Segmentation(String),

    #[error("circle fit failed: {0}")]
    CircleFit(String),

    #[error("implausible iris geometry: {0}")]
    Geometry(String),

    #[error("landmark generation failed: {0}")]
    Landmark(String),

    #[error("triangulation failed: {0}")]
    Triangulation(String),

    #[error("morph of {subject_a} x {subject_b} failed: {source}")]
    Morph {
        subject_a: String,
        subject_b: String,
        #[source]
        source: Box<Error>,
    },

    #[error("iris code encoding failed: {0}")]
    Encode(String),

    #[error("iris code comparison failed: {0}")]
    Comparison(String),

    #[error("pair selection capacity exceeded: requested {requested}, at most {available} available")]
    Capacity { requested: usize, available: usize },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("classifier error: {0}")]
    Model(String),

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} stage failed on {input}: {source}")]
    Stage {
        stage: String,
        input: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format { what: what.into(), reason: reason.into() }
    }

    /// Process exit code used by the command-line front end: 2 for bad
    /// input or configuration, 1 for runtime failures. Wrapper variants
    /// defer to the underlying cause.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Capacity { .. } => 2,
            Error::Stage { source, .. } | Error::Morph { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
