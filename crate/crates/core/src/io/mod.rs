//! MOTChallenge text formats, sequence metadata, images, the synthetic
//! sequence generator and the checkpoint archive.

pub mod archive;
pub mod dataset;
pub mod image;
pub mod mot;
pub mod seqinfo;
pub mod split;
pub mod synthetic;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}line {line}: {message}", path_prefix(.path))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

fn path_prefix(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default()
}

impl DataError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        DataError::Parse {
            path: None,
            line,
            message: message.into(),
        }
    }

    /// Attaches a file path to a parse error.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            DataError::Parse { line, message, .. } => DataError::Parse {
                path: Some(path.to_path_buf()),
                line,
                message,
            },
            other => other,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| DataError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
