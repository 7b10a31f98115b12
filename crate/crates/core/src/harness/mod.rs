//! Experiment orchestration: run configuration, evaluation protocols,
//! score normalization and report tables, metrics persistence, and the
//! single-process and threaded runtimes.

mod bundle;
mod expert;
mod config;
mod eval;
mod metrics;
mod report;
mod run;

pub use bundle::{Bundle, DeterministicRunner};
pub use config::{RunConfig, TransportKind};
pub use eval::{
    eval_human_starts, eval_null_op, EvalProtocol, GreedyNetPolicy, Policy, ProtocolKind,
    QTablePolicy, RandomPolicy,
};
pub use expert::record_expert_trajectory;
pub use metrics::{MetricsRow, MetricsWriter};
pub use report::{
    dqn_normalize, normalize, parse_raw_scores, read_raw_scores, report_tables, write_report,
    DqnNorm, RawScoreRow, ReportError, ReportRow, RowFlag,
};
pub use run::{run_experiment, serve_inproc_param, RunOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Actor(#[from] crate::actor::ActorError),
    #[error(transparent)]
    Learner(#[from] crate::learner::LearnerError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Rl(#[from] crate::rl::RlError),
    #[error(transparent)]
    Client(#[from] crate::server::ClientError),
    #[error(transparent)]
    Server(#[from] crate::server::ServerError),
    #[error(transparent)]
    Transport(#[from] crate::transport::TransportError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("a run component crashed: {0}")]
    ComponentCrash(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
