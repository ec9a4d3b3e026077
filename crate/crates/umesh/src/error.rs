use std::path::PathBuf;

use umesh_nn::NnError;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] umesh_core::Error),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("{0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 3 for solver or training failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            HarnessError::Core(e) => e.is_numerical(),
            HarnessError::Nn(NnError::Diverged { .. }) => true,
            HarnessError::Nn(NnError::Core(e)) => e.is_numerical(),
            _ => false,
        };
        if numerical {
            3
        } else {
            2
        }
    }
}
