use std::path::PathBuf;

use thiserror::Error;

use crate::data::ModelParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no observations")]
    NoObservations,

    #[error("invalid topic id {topic} (number of topics is {n_topics})")]
    InvalidTopic { topic: usize, n_topics: usize },

    #[error("dataset degenerate after pruning")]
    DegenerateDataset,

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("divergence: non-finite {0}")]
    NonFinite(&'static str),

    /// Training produced a non-finite state. Carries the last finite parameters.
    #[error("divergence at pass {pass}, epoch {epoch}")]
    Divergence {
        pass: usize,
        epoch: usize,
        last_finite: Box<ModelParams>,
    },

    #[error("degenerate token distribution (doc {doc}, position {position})")]
    DegenerateToken { doc: usize, position: usize },

    #[error("empty {0} partition")]
    EmptyPartition(&'static str),

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for the failures the CLI reports with the divergence exit code.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence { .. })
    }
}
