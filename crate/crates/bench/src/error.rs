use std::path::{Path, PathBuf};

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] cropbench_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("telemetry backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("sampler already stopped")]
    AlreadyStopped,

    #[error("usage: {0}")]
    Usage(String),

    #[error("workload failed: {0}")]
    Workload(String),
}

impl BenchError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        BenchError::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 workload failure, 3 backend unavailable.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Workload(_) => 2,
            BenchError::BackendUnavailable(_) => 3,
            _ => 1,
        }
    }
}

/// Attaches a path to IO errors.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|e| BenchError::io(path, e))
    }
}
