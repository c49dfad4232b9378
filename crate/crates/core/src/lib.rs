//! Lossy in-network computation of linear functions on Gaussian tree
//! networks: distortion accumulation, rate bounds, rate allocation and
//! numerical validation for data aggregation and consensus.

pub mod allocation;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod infomeasures;
pub mod network;
pub mod simulator;

pub use error::{Error, Result};
pub use network::{DirectedEdge, FlowPlan, Mode, NodeId, TreeNetwork};
