//! The learning loop: sample a minibatch, compute DQN targets against the
//! frozen target network, filter outlier losses, and push the mean gradient
//! to the parameter server tagged with the version the current network was
//! synced from.

use thiserror::Error;

use crate::nn::{NnError, ParamVector, QNetwork};
use crate::replay::{ReplayError, ReplaySource};
use crate::rl::{dqn_loss_and_upstream, Discount, RlError, Transition};
use crate::server::{ApplyOutcome, ClientError, ParamClient};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid learner config: {0}")]
    BadConfig(String),
}

/// Refresh the target network once the global version has advanced by
/// `period` since the last refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetSyncPolicy {
    pub period: u64,
}

impl TargetSyncPolicy {
    pub fn new(period: u64) -> Result<Self, LearnerError> {
        if period == 0 {
            return Err(LearnerError::BadConfig("target sync period must be >= 1".into()));
        }
        Ok(TargetSyncPolicy { period })
    }
}

/// Exponentially weighted running mean and standard deviation of the
/// absolute batch loss, used to reject outlier minibatches.
///
/// First observation initializes the mean exactly; afterwards, with decay
/// `d`:
///
/// ```text
/// diff = x - mean
/// mean += (1 - d) * diff
/// var   = d * (var + (1 - d) * diff^2)
/// ```
///
/// Rejection stays inactive until `warmup_count` observations have been
/// absorbed.
#[derive(Debug, Clone)]
pub struct LossStats {
    mean: f64,
    var: f64,
    count: u64,
    decay: f64,
    k_sigma: f64,
    warmup_count: u64,
}

impl LossStats {
    pub fn new(decay: f64, k_sigma: f64, warmup_count: u64) -> Result<Self, LearnerError> {
        if !(0.0..1.0).contains(&decay) {
            return Err(LearnerError::BadConfig(format!(
                "loss-stats decay must lie in [0,1), got {decay}"
            )));
        }
        if k_sigma.is_nan() || k_sigma <= 0.0 {
            return Err(LearnerError::BadConfig(format!(
                "k_sigma must be positive, got {k_sigma}"
            )));
        }
        Ok(LossStats {
            mean: 0.0,
            var: 0.0,
            count: 0,
            decay,
            k_sigma,
            warmup_count,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.var.max(0.0).sqrt()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Rejection is meaningless before the statistics stabilize.
    pub fn rejection_active(&self) -> bool {
        self.count >= self.warmup_count
    }

    /// Outlier test against the current (pre-update) statistics.
    pub fn is_outlier(&self, abs_loss: f64) -> bool {
        self.rejection_active() && abs_loss > self.mean + self.k_sigma * self.std()
    }

    /// Absorb one absolute-loss observation.
    pub fn update(&mut self, abs_loss: f64) {
        if self.count == 0 {
            self.mean = abs_loss;
            self.var = 0.0;
        } else {
            let diff = abs_loss - self.mean;
            let incr = (1.0 - self.decay) * diff;
            self.mean += incr;
            self.var = self.decay * (self.var + diff * incr);
        }
        self.count += 1;
    }

    #[cfg(test)]
    pub(crate) fn force(mean: f64, std: f64, count: u64, k_sigma: f64, warmup: u64) -> Self {
        LossStats {
            mean,
            var: std * std,
            count,
            decay: 0.999,
            k_sigma,
            warmup_count: warmup,
        }
    }
}

/// What one learner step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Gradient pushed; the server either applied or staleness-discarded it.
    Pushed { outcome: ApplyOutcome, loss: f64 },
    /// Batch loss tripped the outlier filter; nothing was pushed.
    RejectedOutlier { loss: f64 },
    /// Replay below its warm-up fill.
    ReplayNotReady,
}

/// Mean descent gradient of the half-squared DQN loss over a minibatch.
///
/// Per-sample gradients are accumulated in layout order and the sum is
/// scaled by `1/batch` at the end; callers that reproduce this path must
/// keep that exact operation order.
pub fn minibatch_gradient(
    current: &QNetwork,
    target: &QNetwork,
    gamma: Discount,
    batch: &[Transition],
) -> Result<(ParamVector, f64), LearnerError> {
    let mut grad_sum = ParamVector::zeros(current.params().layout().clone());
    let mut loss_sum = 0.0;
    for t in batch {
        let (loss, upstream, _y) = dqn_loss_and_upstream(t, current, target, gamma)?;
        loss_sum += loss;
        let g = current.backward(&t.state, t.action, -upstream)?;
        for (acc, gi) in grad_sum.values_mut().iter_mut().zip(g.values()) {
            *acc += gi;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for v in grad_sum.values_mut() {
        *v *= scale;
    }
    Ok((grad_sum, loss_sum * scale))
}

pub struct LearnerConfig {
    pub gamma: Discount,
    pub batch: usize,
    pub min_fill: usize,
    pub target_sync: TargetSyncPolicy,
    pub rejection_enabled: bool,
    pub loss_decay: f64,
    pub k_sigma: f64,
    pub warmup_count: u64,
}

/// One learner process: owns its current and target network replicas.
pub struct Learner {
    current: QNetwork,
    target: QNetwork,
    stats: LossStats,
    cfg: LearnerConfig,
    base_version: u64,
    last_target_sync: u64,
    rejected_batches: u64,
    stale_pushes: u64,
    last_loss: f64,
}

impl Learner {
    /// Both replicas start from the given network; callers normally sync
    /// from the server before the first step.
    pub fn new(net: QNetwork, cfg: LearnerConfig) -> Result<Self, LearnerError> {
        let stats = LossStats::new(cfg.loss_decay, cfg.k_sigma, cfg.warmup_count)?;
        if cfg.batch == 0 {
            return Err(LearnerError::BadConfig("batch must be >= 1".into()));
        }
        Ok(Learner {
            target: net.clone(),
            current: net,
            stats,
            cfg,
            base_version: 0,
            last_target_sync: 0,
            rejected_batches: 0,
            stale_pushes: 0,
            last_loss: 0.0,
        })
    }

    pub fn current_net(&self) -> &QNetwork {
        &self.current
    }

    pub fn target_net(&self) -> &QNetwork {
        &self.target
    }

    pub fn loss_stats(&self) -> &LossStats {
        &self.stats
    }

    pub fn rejected_batches(&self) -> u64 {
        self.rejected_batches
    }

    pub fn stale_pushes(&self) -> u64 {
        self.stale_pushes
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    pub fn base_version(&self) -> u64 {
        self.base_version
    }

    /// One fetch initializing both replicas: the current network and the
    /// target start equal to the server's parameters.
    pub fn initialize(&mut self, client: &mut dyn ParamClient) -> Result<u64, LearnerError> {
        let (version, params) = client.fetch_full()?;
        self.current.sync_from(&params)?;
        self.target.sync_from(&params)?;
        self.base_version = version;
        self.last_target_sync = version;
        Ok(version)
    }

    /// Fetch the latest parameters into the current network and remember
    /// the version they correspond to.
    pub fn sync_current(&mut self, client: &mut dyn ParamClient) -> Result<u64, LearnerError> {
        let (version, params) = client.fetch_full()?;
        self.current.sync_from(&params)?;
        self.base_version = version;
        Ok(version)
    }

    /// Refresh the target network if the global version has advanced by at
    /// least the sync period; a version jump of several periods still
    /// triggers exactly one refresh.
    pub fn maybe_sync_target(
        &mut self,
        client: &mut dyn ParamClient,
    ) -> Result<Option<u64>, LearnerError> {
        let version = client.server_stats()?.version;
        if version < self.last_target_sync + self.cfg.target_sync.period {
            return Ok(None);
        }
        let (fetched_version, params) = client.fetch_full()?;
        self.target.sync_from(&params)?;
        self.last_target_sync = fetched_version;
        Ok(Some(fetched_version))
    }

    /// One learning step: sample, compute the batch loss and gradient,
    /// update the loss statistics, and push unless the batch is an outlier
    /// (judged against the pre-update statistics).
    pub fn step(
        &mut self,
        replay: &mut dyn ReplaySource,
        client: &mut dyn ParamClient,
    ) -> Result<StepOutcome, LearnerError> {
        if replay.stored()? < self.cfg.min_fill {
            return Ok(StepOutcome::ReplayNotReady);
        }
        let batch = match replay.sample(self.cfg.batch) {
            Ok(batch) => batch,
            Err(ReplayError::NotReady) => return Ok(StepOutcome::ReplayNotReady),
            Err(e) => return Err(e.into()),
        };
        let (grad, loss) = minibatch_gradient(&self.current, &self.target, self.cfg.gamma, &batch)?;
        let reject = self.cfg.rejection_enabled && self.stats.is_outlier(loss.abs());
        self.stats.update(loss.abs());
        self.last_loss = loss;
        if reject {
            self.rejected_batches += 1;
            return Ok(StepOutcome::RejectedOutlier { loss });
        }
        // One retry on transport trouble; rejections are final.
        let outcome = match client.push_gradient(self.base_version, &grad) {
            Ok(outcome) => outcome,
            Err(ClientError::Transport(_)) => client.push_gradient(self.base_version, &grad)?,
            Err(e) => return Err(e.into()),
        };
        if matches!(outcome, ApplyOutcome::DiscardedStale { .. }) {
            self.stale_pushes += 1;
        }
        Ok(StepOutcome::Pushed { outcome, loss })
    }
}
