use std::path::PathBuf;

use thiserror::Error;

use crate::data::dicom::DicomError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("unsupported variant: {0}")]
    Unsupported(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Dicom(#[from] DicomError),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u8, expected: u8 },

    #[error("checkpoint fingerprint does not match the network spec ({0})")]
    FingerprintMismatch(String),

    #[error("tape does not belong to this layer: {0}")]
    TapeMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unreadable or malformed input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format(_)
                | Error::Truncated(_)
                | Error::Unsupported(_)
                | Error::Manifest(_)
                | Error::Dicom(_)
                | Error::CorruptCheckpoint(_)
                | Error::CheckpointVersion { .. }
                | Error::FingerprintMismatch(_)
        )
    }
}
