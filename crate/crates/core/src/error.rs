use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error reading frame {frame} of {path}: {source}")]
    FrameIo {
        path: PathBuf,
        frame: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("sequence {path} is truncated: frame {frame} is missing")]
    Truncated { path: PathBuf, frame: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error in {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("corrupt data{}: {message}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Corruption { frame: Option<usize>, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("entropy encoding error: {0}")]
    Encoding(String),
    #[error("entropy decoding error at byte {offset}: {message}")]
    Decoding { offset: usize, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("decode verification failed at frame {frame}: {message}")]
    Verification { frame: usize, message: String },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn corrupt(frame: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Corruption {
            frame,
            message: msg.into(),
        }
    }

    /// Attaches a frame index to corruption/decoding errors that lack one.
    pub fn at_frame(self, index: usize) -> Self {
        match self {
            Error::Corruption { frame: None, message } => Error::Corruption {
                frame: Some(index),
                message,
            },
            Error::Decoding { offset, message } => Error::Corruption {
                frame: Some(index),
                message: format!("entropy stream error at byte {offset}: {message}"),
            },
            other => other,
        }
    }
}
