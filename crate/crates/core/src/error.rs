use thiserror::Error;

use crate::network::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fusion weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("fusion weight {weight} is not strictly positive")]
    NonPositiveWeight { weight: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("range {range} m is below the singularity floor")]
    Singularity { range: f64 },

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("edge ({0}, {1}) has no reverse edge")]
    AsymmetricEdge(NodeId, NodeId),

    #[error("node {node} is missing a message from neighbor {neighbor}")]
    MissingNeighbor { node: NodeId, neighbor: NodeId },

    #[error("message from node {sender} is tagged (t={time}, round={round}), expected (t={expected_time}, round={expected_round})")]
    RoundMismatch {
        sender: NodeId,
        time: u64,
        round: u64,
        expected_time: u64,
        expected_round: u64,
    },

    #[error("node {node}, t={time}, round={round}: {source}")]
    Numerical {
        node: NodeId,
        time: u64,
        round: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("scenario error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn at(self, node: NodeId, time: u64, round: u64) -> Error {
        match self {
            e @ Error::Numerical { .. } => e,
            e => Error::Numerical {
                node,
                time,
                round,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
