//! The sharded central parameter server.
//!
//! The master parameter vector is split into contiguous, disjoint,
//! equal-length blocks (remainder to the last shard), each with its own
//! AdaGrad state and mutex. A gradient message is validated once against the
//! staleness rule, then all of its shard slices are applied; the validation
//! path is the serialization point that makes the global version counter
//! well defined. Fetches take only the per-shard locks, so they may run
//! concurrently with applies: a fetched shard always corresponds to a whole
//! number of applied messages, while cross-shard skew is allowed.

mod client;
mod service;
mod state;

pub use client::{
    assemble_slices, split_into_slices, ClientError, InlineParamClient, ParamClient,
    RemoteParamClient,
};
pub use service::{serve_param_connection, spawn_tcp_param_server};
pub use state::{shard_ranges, ApplyOutcome, ParamServer};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("shards unavailable: {0:?}")]
    ShardsUnavailable(Vec<u32>),
    #[error("server construction: {0}")]
    Construction(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
