use std::path::PathBuf;

use crate::valuation::AgentId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown agent id {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} appears more than once")]
    DuplicateAgent(AgentId),
    #[error("agent {0} is already in the base set")]
    AgentInBase(AgentId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("instance too large for {solver}: {n} agents (limit {limit})")]
    TooLarge {
        solver: &'static str,
        n: usize,
        limit: usize,
    },
    #[error("instance is not from a uniform-cost family: {0}")]
    NotUniform(String),
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
