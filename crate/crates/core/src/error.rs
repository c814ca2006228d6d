use std::path::PathBuf;

use crate::scorer::ScorerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unresolved ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),

    #[error("invalid template {template:?}: {reason}")]
    Template { template: String, reason: String },

    #[error("invalid entity {id:?}: {reason}")]
    Entity { id: String, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error("unknown entity {0:?}")]
    UnknownEntity(String),

    #[error("unknown relation {0:?}")]
    UnknownRelation(String),

    #[error("relation {0:?} has no templates")]
    NoTemplates(String),

    #[error("every alias of object {0:?} is out of vocabulary")]
    ObjectAllOov(String),

    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

impl Error {
    /// True when the failure came from the scoring backend's transport and a
    /// later retry (or `--resume`) could succeed.
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Scorer(e) if e.is_transport())
    }
}
