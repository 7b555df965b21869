use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Arguments violate an operation's preconditions (shapes, ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// A non-finite value showed up in an activation, gradient or update.
    #[error("numeric failure in {layer}: {detail}")]
    Numeric { layer: String, detail: String },

    /// Backward was called with a cache that does not belong to the
    /// current parameters or was not produced in train mode.
    #[error("invalid forward cache: {0}")]
    Cache(String),

    #[error("stage `{stage}` failed on image `{image_id}`: {source}")]
    Stage {
        stage: &'static str,
        image_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: &'static str, image_id: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage,
            image_id: image_id.into(),
            source: Box::new(source),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
