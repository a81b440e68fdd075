use std::path::PathBuf;

use crate::metrics::Factor;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected SDT1, found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("truncated header")]
    TruncatedHeader,

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("missing factor {factor} for layer {layer} ({path})")]
    MissingFactor {
        layer: String,
        factor: Factor,
        path: PathBuf,
    },

    #[error("layer {layer}, factor {factor}: manifest lists {expected} pairs but {file} holds {found} rows")]
    RowCountMismatch {
        layer: String,
        factor: Factor,
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("layer {layer}: channel count mismatch ({detail})")]
    ChannelMismatch { layer: String, detail: String },

    #[error("non-finite activation in layer {layer}, factor {factor} at row {row}, channel {channel}")]
    NonFinite {
        layer: String,
        factor: Factor,
        row: usize,
        channel: usize,
    },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown style {0:?}")]
    UnknownStyle(String),

    #[error("dynamic pairs need at least 2 styles, got {0}")]
    NotEnoughStyles(usize),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
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
}
