//! Desk-scale distributed deep Q-learning.
//!
//! The crate implements a data-parallel DQN training system built from four
//! kinds of components that communicate only through parameters and
//! experience:
//!
//! - **actors** interact with their own environment instances under an
//!   epsilon-greedy policy and write transitions into replay memory,
//! - **learners** sample replay minibatches, compute DQN gradients against a
//!   periodically refreshed target network, and push them upstream,
//! - a **sharded parameter server** owns the master parameter vector, applies
//!   incoming gradients asynchronously with AdaGrad, and discards gradients
//!   whose base version is too stale,
//! - **replay memory** exists per-bundle (ring buffer) or as a sharded
//!   global store service.
//!
//! Components talk over a small framed wire protocol with two interchangeable
//! transports: an in-process queue pair (deterministic, used by the test
//! oracles) and TCP sockets for true multi-process runs. An evaluation
//! harness reproduces standard score-normalization protocols and drives
//! experiments end to end.

pub mod actor;
pub mod envs;
pub mod harness;
pub mod learner;
pub mod nn;
pub mod replay;
pub mod rl;
pub mod seed;
pub mod server;
pub mod transport;
