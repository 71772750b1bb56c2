use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. Messages are single-line so the CLI
/// can print them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("rate error: {path} is sampled at {found} Hz, expected {expected} Hz")]
    SampleRate {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("channel error: {path} has {channels} channels, expected mono")]
    Channels { path: PathBuf, channels: u16 },
    #[error("format error: {0}")]
    Format(String),
    #[error("incompatible file: {0}")]
    Incompatible(String),
    #[error("training error at step {step}: non-finite loss ({detail})")]
    NonFinite { step: u64, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
