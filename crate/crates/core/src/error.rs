use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A backward pass was requested without the matching forward cache.
    #[error("missing forward cache for {0}")]
    MissingCache(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes: not a checkpoint file")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("checkpoint has {found} classes, expected {expected}")]
    ClassMismatch { found: usize, expected: usize },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed image: {0}")]
    Malformed(String),

    #[error("unsupported bit depth {found} (expected 16-bit)")]
    BitDepth { found: u8 },

    #[error("unsupported color type {0} (expected single-channel grayscale)")]
    ColorType(String),

    #[error("empty foreground: clip has no nonzero depth pixel")]
    EmptyForeground,

    #[error("video {0} has no frames")]
    NoFrames(PathBuf),

    #[error("inconsistent frame size in {path}: {found:?} vs {expected:?}")]
    FrameSize {
        path: PathBuf,
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("sample {sample} has no {field} field")]
    MissingField { sample: String, field: &'static str },

    #[error("protocol: {0}")]
    Protocol(String),
}
