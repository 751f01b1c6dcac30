//! Graph-embedded deep reinforcement learning for V2X spectrum and power
//! allocation.
//!
//! Each directed vehicle-to-vehicle link is a node of a link graph; a
//! two-layer GraphSAGE encoder compresses the neighbourhood of a link into a
//! low-dimensional embedding, and a double DQN picks the link's subchannel and
//! transmit power from its local channel state plus that embedding.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod sage;

pub use config::LabConfig;
pub use error::{LabError, Result};
