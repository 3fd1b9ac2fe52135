use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: configuration, parameters, or arguments.
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("empty class: {0}")]
    EmptyClass(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{0}` has no spatial feature maps")]
    NotSpatial(String),

    #[error("no out-of-class images available for random concepts")]
    NoOutOfClassImages,

    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("image encoding failed: {0}")]
    Encode(#[from] image::ImageError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("malformed tensor file: {0}")]
    Tensor(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure stems from user input rather than from running
    /// the analysis. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid { .. } | Error::Config { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
