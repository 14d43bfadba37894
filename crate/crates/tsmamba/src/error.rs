use std::io;
use std::path::PathBuf;

/// Anything that can go wrong outside the numeric core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: cannot decode image: {source}", path.display())]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("class count mismatch: {0}")]
    ClassMismatch(String),
    #[error("{0}")]
    Core(#[from] tsmamba_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
