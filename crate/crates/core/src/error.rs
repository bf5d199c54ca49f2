use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {kind}")]
    MeshLoad {
        path: PathBuf,
        line: usize,
        kind: MeshLoadError,
    },

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("singular system: zero pivot at row {row}")]
    SingularSystem { row: usize },

    #[error("point {point:?} lies outside the mesh")]
    OutOfDomain { point: Vec<f64> },

    #[error("{what} did not converge after {iterations} iterations (last estimate {estimate:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        estimate: f64,
        last_iterate: Vec<f64>,
    },

    #[error("singular preconditioner: zero diagonal entry at row {row}")]
    SingularPreconditioner { row: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("unsupported mesh pair: {0}")]
    UnsupportedPair(String),

    #[error("config: {0}")]
    Config(String),

    #[error("sweep point {axis}={value}: {source}")]
    SweepPoint {
        axis: String,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MeshLoadError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dangling node index {index} (mesh has {n_nodes} nodes)")]
    DanglingIndex { index: usize, n_nodes: usize },
    #[error("element has zero or negative measure")]
    DegenerateElement,
    #[error("repeated node index in element")]
    RepeatedIndex,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
