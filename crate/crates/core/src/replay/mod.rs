//! Experience replay memory.
//!
//! Two forms with the same sampling law (uniform with replacement over the
//! current contents):
//!
//! - [`LocalReplay`]: a FIFO ring buffer owned by one bundle, shared between
//!   that bundle's actor (writer) and learner (reader) behind a mutex.
//! - [`GlobalReplay`]: a service aggregating many actors' experience into
//!   per-shard rings; puts route by a hash of (actor_id, step), samples draw
//!   a shard proportionally to its size and then uniformly within it, which
//!   composes to a uniform draw over everything stored.

mod client;
mod global;
mod local;

pub use client::{GlobalReplayClient, SharedReplay, SharedReplaySource};
pub use global::{shard_key, GlobalReplay};
pub use local::LocalReplay;

use thiserror::Error;

use crate::rl::Transition;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay is empty or below its warm-up fill")]
    NotReady,
    #[error("replay store rejected the request: {0}")]
    Rejected(String),
    #[error("transport: {0}")]
    Transport(#[from] crate::transport::TransportError),
    #[error("unexpected response: {0}")]
    UnexpectedResponse(String),
}

/// Where learners draw minibatches from.
pub trait ReplaySource {
    /// Transitions currently stored (across all shards, where applicable).
    fn stored(&mut self) -> Result<usize, ReplayError>;
    /// `batch` independent uniform draws with replacement.
    fn sample(&mut self, batch: usize) -> Result<Vec<Transition>, ReplayError>;
}

/// Where actors write transitions to.
pub trait ExperienceSink {
    fn insert(&mut self, t: Transition) -> Result<(), ReplayError>;
}
