//! One bundle (actor + local replay + learner) and the single-threaded
//! deterministic runtime.
//!
//! The canonical step order inside a bundle is:
//!
//! 1. actor step (sync policy if due, act, store the transition),
//! 2. learner syncs its current network from the server,
//! 3. learner step (sample, gradient, push — or not-ready/rejected),
//! 4. learner target sync check.
//!
//! The deterministic runtime drives every bundle through this order on one
//! thread, so a fixed master seed fully determines the parameter
//! trajectory; the serial reference loop in the test suite mirrors this
//! order step for step.

use std::sync::Arc;

use crate::actor::{Actor, ActorConfig, ActorStats};
use crate::envs::env_by_name;
use crate::learner::{Learner, LearnerConfig, StepOutcome, TargetSyncPolicy};
use crate::nn::{ParamVector, QNetwork};
use crate::replay::{SharedReplay, SharedReplaySource};
use crate::rl::Discount;
use crate::seed::{derive_seed, stream_rng};
use crate::server::{InlineParamClient, ParamClient, ParamServer};

use super::config::RunConfig;
use super::HarnessError;

pub struct Bundle {
    actor: Actor,
    learner: Learner,
    sink: SharedReplay,
    source: SharedReplaySource,
}

impl Bundle {
    /// Build bundle `id` from the run config. RNG streams are derived from
    /// the master seed as `actor.{id}`, `sample.{id}` and `env.{id}`.
    pub fn build(cfg: &RunConfig, id: u32) -> Result<Self, HarnessError> {
        let env = env_by_name(&cfg.env)
            .ok_or_else(|| HarnessError::Config(format!("unknown env '{}'", cfg.env)))?;
        let layers = QNetwork::mlp_spec(
            env.observation_dim() * cfg.stack_k,
            &cfg.hidden,
            env.action_count(),
        );
        let actor_cfg = ActorConfig {
            actor_id: id,
            sync_period_steps: cfg.sync_period,
            episode_cap: cfg.episode_cap,
            env_seed_base: derive_seed(cfg.seed, &format!("env.{id}")),
            epsilon: cfg.epsilon_schedule()?,
            stack_k: cfg.stack_k,
        };
        let actor = Actor::new(
            actor_cfg,
            env,
            QNetwork::zeros(layers.clone())?,
            stream_rng(cfg.seed, &format!("actor.{id}")),
        )?;
        let learner_cfg = LearnerConfig {
            gamma: Discount::new(cfg.gamma).map_err(|e| HarnessError::Config(e.to_string()))?,
            batch: cfg.batch,
            min_fill: cfg.min_fill,
            target_sync: TargetSyncPolicy::new(cfg.target_period)?,
            rejection_enabled: cfg.rejection,
            loss_decay: cfg.loss_decay,
            k_sigma: cfg.k_sigma,
            warmup_count: cfg.warmup_batches,
        };
        let learner = Learner::new(QNetwork::zeros(layers)?, learner_cfg)?;
        let replay = SharedReplay::new(cfg.replay_capacity);
        let source =
            SharedReplaySource::new(replay.clone(), stream_rng(cfg.seed, &format!("sample.{id}")));
        Ok(Bundle {
            actor,
            learner,
            sink: replay,
            source,
        })
    }

    /// Sync both learner replicas to the server's current parameters.
    pub fn initialize(&mut self, client: &mut dyn ParamClient) -> Result<(), HarnessError> {
        self.learner.initialize(client)?;
        Ok(())
    }

    /// One acting step followed by one learning step.
    pub fn step(&mut self, client: &mut dyn ParamClient) -> Result<StepOutcome, HarnessError> {
        let mut sink = self.sink.clone();
        self.actor.step(&mut sink, client)?;
        self.learner.sync_current(client)?;
        let outcome = self.learner.step(&mut self.source, client)?;
        self.learner.maybe_sync_target(client)?;
        Ok(outcome)
    }

    pub fn actor_stats(&self) -> ActorStats {
        self.actor.stats()
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn replay(&self) -> &SharedReplay {
        &self.sink
    }
}

/// Single-threaded lockstep runtime over an inline server: bundle steps and
/// gradient applies interleave in a fixed order, so runs are reproducible
/// bit for bit.
pub struct DeterministicRunner {
    server: Arc<ParamServer>,
    bundles: Vec<Bundle>,
    clients: Vec<InlineParamClient>,
}

impl DeterministicRunner {
    /// The initial network is seeded from the `init` stream of the master
    /// seed; the server starts at version 0 with those weights.
    pub fn new(cfg: &RunConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let env = env_by_name(&cfg.env)
            .ok_or_else(|| HarnessError::Config(format!("unknown env '{}'", cfg.env)))?;
        let layers = QNetwork::mlp_spec(
            env.observation_dim() * cfg.stack_k,
            &cfg.hidden,
            env.action_count(),
        );
        let initial = QNetwork::seeded(layers, derive_seed(cfg.seed, "init"))?;
        let n_shards = cfg.effective_n_param(initial.params().len());
        let server = Arc::new(ParamServer::new(
            initial.params(),
            n_shards,
            cfg.eta,
            cfg.epsilon_ada,
            cfg.max_delay,
        )?);
        let mut bundles = Vec::with_capacity(cfg.n_act as usize);
        let mut clients = Vec::with_capacity(cfg.n_act as usize);
        for id in 0..cfg.n_act {
            let mut bundle = Bundle::build(cfg, id)?;
            let mut client = InlineParamClient::new(Arc::clone(&server));
            bundle.initialize(&mut client)?;
            bundles.push(bundle);
            clients.push(client);
        }
        Ok(DeterministicRunner {
            server,
            bundles,
            clients,
        })
    }

    pub fn server(&self) -> &Arc<ParamServer> {
        &self.server
    }

    pub fn version(&self) -> u64 {
        self.server.current_version()
    }

    /// One lockstep pass: every bundle takes one step, in bundle order.
    pub fn step(&mut self) -> Result<Vec<StepOutcome>, HarnessError> {
        self.bundles
            .iter_mut()
            .zip(self.clients.iter_mut())
            .map(|(b, c)| b.step(c))
            .collect()
    }

    /// Current master parameters, fetched through the same path clients use.
    pub fn fetch_params(&mut self) -> Result<(u64, ParamVector), HarnessError> {
        let mut client = InlineParamClient::new(Arc::clone(&self.server));
        Ok(client.fetch_full()?)
    }

    pub fn bundles(&self) -> &[Bundle] {
        &self.bundles
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            min_fill: 20,
            replay_capacity: 200,
            batch: 4,
            hidden: vec![8],
            episode_cap: 30,
            epsilon_horizon: 200,
            target_period: 25,
            max_versions: 100,
            ..RunConfig::default()
        }
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_parameters() {
        let run = || {
            let mut runner = DeterministicRunner::new(&tiny_cfg()).unwrap();
            for _ in 0..300 {
                runner.step().unwrap();
            }
            runner.fetch_params().unwrap()
        };
        let (v1, p1) = run();
        let (v2, p2) = run();
        assert_eq!(v1, v2);
        assert!(v1 > 0, "no gradients were applied");
        assert!(p1.bitwise_eq(&p2));
    }

    #[test]
    fn different_seeds_diverge() {
        let mut cfg = tiny_cfg();
        let mut a = DeterministicRunner::new(&cfg).unwrap();
        cfg.seed = 2;
        let mut b = DeterministicRunner::new(&cfg).unwrap();
        for _ in 0..100 {
            a.step().unwrap();
            b.step().unwrap();
        }
        let (_, pa) = a.fetch_params().unwrap();
        let (_, pb) = b.fetch_params().unwrap();
        assert!(!pa.bitwise_eq(&pb));
    }

    #[test]
    fn aggregate_replay_capacity_is_per_bundle_capacity_times_bundles() {
        let cfg = RunConfig {
            n_act: 3,
            n_learn: 3,
            deterministic: false,
            ..tiny_cfg()
        };
        let runner = DeterministicRunner::new(&cfg).unwrap();
        let total: usize = runner
            .bundles()
            .iter()
            .map(|b| b.replay().with(|buf| buf.capacity()))
            .sum();
        assert_eq!(total, cfg.replay_capacity * cfg.n_act as usize);
    }

    #[test]
    fn warmup_gates_learning() {
        let cfg = tiny_cfg();
        let mut runner = DeterministicRunner::new(&cfg).unwrap();
        for _ in 0..cfg.min_fill - 1 {
            for outcome in runner.step().unwrap() {
                assert_eq!(outcome, StepOutcome::ReplayNotReady);
            }
        }
        assert_eq!(runner.version(), 0);
        let mut pushed = false;
        for _ in 0..5 {
            pushed |= runner
                .step()
                .unwrap()
                .iter()
                .any(|o| matches!(o, StepOutcome::Pushed { .. }));
        }
        assert!(pushed, "no push right after warm-up");
        assert!(runner.version() > 0);
    }
}
