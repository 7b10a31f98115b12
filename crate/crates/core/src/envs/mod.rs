//! Desk-scale environments and the oracles built on them.
//!
//! Both shipped environments are small tabular MDPs observed as one-hot
//! vectors, so the optimal action-value function is exactly computable by
//! value iteration and every learning run can be scored against ground
//! truth. Environments carry their own snapshot-able RNG, which makes
//! seeded episodes exactly replayable: the affordance the evaluation
//! protocols (start-state injection, recorded trajectories) are built on.

mod chain;
mod gridworld;
mod stacker;
mod tabular;
mod trajectory;

pub use chain::ChainMdp;
pub use gridworld::GridWorld;
pub use stacker::ObservationStacker;
pub use tabular::{
    expected_random_return, greedy_policy_return, random_agent_rollout, value_iteration, QTable,
    TabularDynamics,
};
pub use trajectory::{
    load_trajectory, save_trajectory,
    record_trajectory, read_trajectory, write_trajectory, Trajectory, TrajectoryStep,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode is over; reset the environment first")]
    EpisodeOver,
    #[error("invalid action {action} for an action set of {actions}")]
    InvalidAction { action: usize, actions: usize },
    #[error("snapshot does not fit this environment: {0}")]
    SnapshotMismatch(String),
    #[error("trajectory fixture mismatch: {0}")]
    TrajectoryMismatch(String),
    #[error("value iteration did not converge: residual {0}")]
    NonConvergent(f64),
    #[error("bad trajectory file: {0}")]
    BadTrajectory(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// Versioned, environment-defined saved state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub env_name: String,
    pub version: u32,
    pub data: Vec<u8>,
}

/// A sequential decision environment.
///
/// Stepping a finished episode is an error until `reset`. Given the same
/// seed and action sequence, a deterministic environment reproduces the
/// same observation/reward/terminal stream; snapshots capture the full
/// state including the internal RNG, so restore-and-replay is exact.
pub trait Environment: Send {
    fn name(&self) -> &'static str;
    fn action_count(&self) -> usize;
    fn observation_dim(&self) -> usize;
    /// The do-nothing action at the start state (modulo slip).
    fn null_action(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepResult, EnvError>;
    fn snapshot(&self) -> Snapshot;
    fn restore(&mut self, snap: &Snapshot) -> Result<(), EnvError>;
    /// True when seed + actions fully determine the episode.
    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Construct a shipped environment by name ("chain" or "gridworld").
pub fn env_by_name(name: &str) -> Option<Box<dyn Environment>> {
    match name {
        "chain" => Some(Box::new(ChainMdp::default())),
        "gridworld" => Some(Box::new(GridWorld::default())),
        _ => None,
    }
}

/// The tabular view of a shipped environment, for the oracles.
pub fn tabular_by_name(name: &str) -> Option<Box<dyn TabularDynamics>> {
    match name {
        "chain" => Some(Box::new(ChainMdp::default())),
        "gridworld" => Some(Box::new(GridWorld::default())),
        _ => None,
    }
}
