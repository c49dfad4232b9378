use thiserror::Error;

use crate::network::{DirectedEdge, NodeId};

/// Errors raised across parsing, evaluation, allocation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed tree document: {0}")]
    Malformed(String),

    #[error("node {node}: {reason}")]
    InvalidNode { node: NodeId, reason: String },

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("nodes {from} and {to} are not adjacent")]
    NotAdjacent { from: NodeId, to: NodeId },

    #[error("missing entry for link {0}")]
    MissingEntry(DirectedEdge),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible distortion: {0}")]
    Infeasible(String),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 3,
            Error::Consistency(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn invalid_node(node: NodeId, reason: impl Into<String>) -> Self {
        Error::InvalidNode {
            node,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
