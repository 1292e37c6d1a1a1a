use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: rating {rating} outside scale [{low}, {high}]")]
    Range {
        path: PathBuf,
        line: usize,
        rating: f64,
        low: f64,
        high: f64,
    },
    #[error("{path}:{line}: duplicate (user, item) pair ({user}, {item})")]
    Duplicate {
        path: PathBuf,
        line: usize,
        user: String,
        item: String,
    },
    #[error("supplier map does not cover catalog items: {}", missing.join(", "))]
    Coverage { missing: Vec<String> },
    #[error("item {item} assigned to conflicting suppliers {first} and {second}")]
    Conflict {
        item: String,
        first: String,
        second: String,
    },
    #[error("unknown {kind} identifier {id:?}")]
    UnknownId { kind: &'static str, id: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("missing prediction for ({user}, {item})")]
    MissingPrediction { user: String, item: String },
    #[error("simulation failed at iteration {iteration}: {source}")]
    Simulation {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
