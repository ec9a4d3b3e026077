use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid boundary specification: {0}")]
    Boundary(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid material: {0}")]
    Material(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("conjugate gradient breakdown at iteration {iteration}: matrix is not positive definite")]
    CgBreakdown { iteration: usize },

    #[error("dense reduced system could not be factorised")]
    DenseSolve,

    #[error("tangent system is singular at the reference state; check the Dirichlet set")]
    SingularSystem,

    #[error("Newton continuation failed at load fraction {load_fraction:.4} (residual {residual:.3e})")]
    NewtonNotConverged {
        load_fraction: f64,
        residual: f64,
        /// Last converged displacement state.
        best_state: Vec<f64>,
    },

    #[error("infeasible sampling request: {0}")]
    Infeasible(String),

    #[error("{0}")]
    TooManySkipped(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("scenario digest mismatch: {0}")]
    DigestMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures of the numerical solvers rather than of inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::CgNotConverged { .. }
                | Error::CgBreakdown { .. }
                | Error::DenseSolve
                | Error::SingularSystem
                | Error::NewtonNotConverged { .. }
        )
    }
}
