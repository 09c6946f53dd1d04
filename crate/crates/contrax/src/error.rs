use std::path::PathBuf;

pub type Result<T, E = IoError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("{0}")]
    Parse(String),
    #[error("certificate re-verification failed: {0}")]
    Certificate(String),
    #[error(transparent)]
    Core(#[from] contrax_core::Error),
}

impl IoError {
    pub fn schema(msg: impl Into<String>) -> Self {
        IoError::Schema(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        IoError::Parse(msg.into())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &std::path::Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}
