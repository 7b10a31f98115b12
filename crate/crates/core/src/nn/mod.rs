//! Dense-tensor math for the Q-network.
//!
//! Everything is double precision and laid out flat: a [`ParamVector`] is one
//! contiguous `Vec<f64>` plus a [`Layout`] describing which slice belongs to
//! which layer tensor. Networks, gradients, checkpoints and the parameter
//! server shards all share this layout, so parameters move between components
//! as plain slices with no reshaping.

mod adagrad;
mod checkpoint;
mod mlp;
mod params;

pub use adagrad::AdaGradState;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use mlp::{layers_from_layout, Activation, ForwardTrace, LayerSpec, QNetwork};
pub use params::{Layout, LayoutEntry, ParamVector};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input shape mismatch: expected dim {expected}, got {got}")]
    InputShape { expected: usize, got: usize },
    #[error("action index {action} out of range for {actions} actions")]
    ActionRange { action: usize, actions: usize },
    #[error("slice length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid network architecture: {0}")]
    BadArchitecture(String),
    #[error("invalid optimizer config: {0}")]
    BadOptimizerConfig(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}
