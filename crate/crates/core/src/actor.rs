//! The acting loop: sync the policy network from the parameter server, act
//! epsilon-greedily in an owned environment instance, and store transitions
//! into replay. Exploration is annealed by the server's global version as
//! fetched at sync time, not by local step count.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::rngs::StdRng;
use thiserror::Error;

use crate::envs::{EnvError, Environment, ObservationStacker};
use crate::nn::{NnError, QNetwork};
use crate::replay::{ExperienceSink, ReplayError};
use crate::rl::{select_action, EpsilonSchedule, RlError, Transition};
use crate::server::{ClientError, ParamClient};

#[derive(Debug, Error)]
pub enum ActorError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid actor config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone)]
pub struct ActorConfig {
    pub actor_id: u32,
    /// Sync the policy from the server every this many steps (and at every
    /// episode start). 1 reproduces the per-step sync of the reference
    /// algorithm.
    pub sync_period_steps: u64,
    /// Episode step cap T.
    pub episode_cap: usize,
    /// Episode e resets its environment with `env_seed_base + e`.
    pub env_seed_base: u64,
    pub epsilon: EpsilonSchedule,
    /// Observation-stack window; 1 disables stacking.
    pub stack_k: usize,
}

impl ActorConfig {
    pub fn validate(&self) -> Result<(), ActorError> {
        if self.sync_period_steps == 0 {
            return Err(ActorError::BadConfig("sync period must be >= 1".into()));
        }
        if self.episode_cap == 0 {
            return Err(ActorError::BadConfig("episode cap must be >= 1".into()));
        }
        if self.stack_k == 0 {
            return Err(ActorError::BadConfig("stack window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActorStats {
    pub episodes: u64,
    pub steps: u64,
    pub total_reward: f64,
    pub fetches: u64,
    pub aborted_episodes: u64,
}

/// One actor process: owns its environment and policy replica.
pub struct Actor {
    cfg: ActorConfig,
    env: Box<dyn Environment>,
    net: QNetwork,
    rng: StdRng,
    stacker: ObservationStacker,
    obs: Vec<f64>,
    version: u64,
    episode_steps: usize,
    steps_since_sync: u64,
    needs_reset: bool,
    stats: ActorStats,
}

impl Actor {
    /// `net` supplies the replica's architecture; it is overwritten by the
    /// first sync before any action is taken.
    pub fn new(
        cfg: ActorConfig,
        env: Box<dyn Environment>,
        net: QNetwork,
        rng: StdRng,
    ) -> Result<Self, ActorError> {
        cfg.validate()?;
        let dim = env.observation_dim();
        if net.input_dim() != dim * cfg.stack_k || net.n_actions() != env.action_count() {
            return Err(ActorError::BadConfig(format!(
                "network {}x{} does not fit env {}x{} with stack {}",
                net.input_dim(),
                net.n_actions(),
                dim,
                env.action_count(),
                cfg.stack_k
            )));
        }
        Ok(Actor {
            stacker: ObservationStacker::new(cfg.stack_k, dim),
            cfg,
            env,
            net,
            rng,
            obs: Vec::new(),
            version: 0,
            episode_steps: 0,
            steps_since_sync: 0,
            needs_reset: true,
            stats: ActorStats::default(),
        })
    }

    pub fn stats(&self) -> ActorStats {
        self.stats
    }

    pub fn current_version(&self) -> u64 {
        self.version
    }

    /// One acting step: (re)sync if due, pick an action at the epsilon for
    /// the synced version, step the environment, store the transition.
    /// An environment fault aborts the episode and counts it.
    pub fn step(
        &mut self,
        sink: &mut dyn ExperienceSink,
        client: &mut dyn ParamClient,
    ) -> Result<(), ActorError> {
        if self.needs_reset {
            let seed = self.cfg.env_seed_base.wrapping_add(self.stats.episodes);
            let raw = self.env.reset(seed);
            self.stacker.reset();
            self.obs = self.stacker.push(&raw);
            self.episode_steps = 0;
            self.steps_since_sync = 0;
            self.needs_reset = false;
        }
        if self.steps_since_sync.is_multiple_of(self.cfg.sync_period_steps) {
            let (version, params) = client.fetch_full()?;
            self.net.sync_from(&params)?;
            self.version = version;
            self.stats.fetches += 1;
        }
        self.steps_since_sync += 1;

        let epsilon = self.cfg.epsilon.epsilon_at(self.version);
        let action = select_action(&self.net, &self.obs, epsilon, &mut self.rng)?;
        let result = match self.env.step(action) {
            Ok(r) => r,
            Err(EnvError::EpisodeOver | EnvError::InvalidAction { .. }) => {
                self.stats.episodes += 1;
                self.stats.aborted_episodes += 1;
                self.needs_reset = true;
                return Ok(());
            }
            Err(e) => {
                return Err(ActorError::Replay(ReplayError::Rejected(format!(
                    "environment fault: {e}"
                ))))
            }
        };

        let next_obs = self.stacker.push(&result.observation);
        sink.insert(Transition {
            state: std::mem::take(&mut self.obs),
            action,
            reward: result.reward,
            next_state: next_obs.clone(),
            terminal: result.terminal,
            actor_id: self.cfg.actor_id,
            step: self.stats.steps,
        })?;
        self.obs = next_obs;
        self.episode_steps += 1;
        self.stats.steps += 1;
        self.stats.total_reward += result.reward;

        if result.terminal || self.episode_steps >= self.cfg.episode_cap {
            self.stats.episodes += 1;
            self.needs_reset = true;
        }
        Ok(())
    }

    /// Run until the stop signal; returns the accumulated stats.
    pub fn run(
        &mut self,
        sink: &mut dyn ExperienceSink,
        client: &mut dyn ParamClient,
        stop: &AtomicBool,
    ) -> Result<ActorStats, ActorError> {
        while !stop.load(Ordering::SeqCst) {
            self.step(sink, client)?;
        }
        Ok(self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ChainMdp;
    use crate::replay::SharedReplay;
    use crate::server::{InlineParamClient, ParamServer};
    use rand::SeedableRng;
    use std::sync::Arc;

    fn chain_net(seed: u64) -> QNetwork {
        QNetwork::seeded(QNetwork::mlp_spec(5, &[8], 2), seed).unwrap()
    }

    fn actor_cfg(sync_period: u64) -> ActorConfig {
        ActorConfig {
            actor_id: 0,
            sync_period_steps: sync_period,
            episode_cap: 50,
            env_seed_base: 0,
            epsilon: EpsilonSchedule::new(1.0, 0.1, 1000).unwrap(),
            stack_k: 1,
        }
    }

    fn make(
        cfg: ActorConfig,
        rng_seed: u64,
    ) -> (Actor, SharedReplay, InlineParamClient, Arc<ParamServer>) {
        let net = chain_net(5);
        let server = Arc::new(ParamServer::new(net.params(), 4, 0.05, 1e-8, None).unwrap());
        let actor = Actor::new(
            cfg,
            Box::new(ChainMdp::default()),
            QNetwork::zeros(QNetwork::mlp_spec(5, &[8], 2)).unwrap(),
            StdRng::seed_from_u64(rng_seed),
        )
        .unwrap();
        let replay = SharedReplay::new(4096);
        let client = InlineParamClient::new(Arc::clone(&server));
        (actor, replay, client, server)
    }

    #[test]
    fn stop_before_first_step_yields_zero_stats() {
        let (mut actor, replay, mut client, _server) = make(actor_cfg(1), 0);
        let stop = AtomicBool::new(true);
        let mut sink = replay.clone();
        let stats = actor.run(&mut sink, &mut client, &stop).unwrap();
        assert_eq!(stats, ActorStats::default());
        assert_eq!(replay.len(), 0);
    }

    #[test]
    fn deterministic_runs_produce_identical_transitions() {
        let run = || {
            // epsilon 0 everywhere: schedule with start = end = 0
            let mut cfg = actor_cfg(1);
            cfg.epsilon = EpsilonSchedule::new(0.0, 0.0, 1).unwrap();
            let (mut actor, replay, mut client, _server) = make(cfg, 3);
            let mut sink = replay.clone();
            for _ in 0..200 {
                actor.step(&mut sink, &mut client).unwrap();
            }
            replay.with(|buf| {
                buf.iter_in_order()
                    .map(|t| (t.state.clone(), t.action, t.reward.to_bits(), t.terminal))
                    .collect::<Vec<_>>()
            })
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn transitions_match_env_audit_log() {
        // Replay an identical seeded env next to the actor and check every
        // stored transition against the audit stream.
        let cfg = actor_cfg(1);
        let (mut actor, replay, mut client, _server) = make(cfg.clone(), 9);
        let mut sink = replay.clone();
        for _ in 0..300 {
            actor.step(&mut sink, &mut client).unwrap();
        }

        let mut audit_env = ChainMdp::default();
        let mut audit = Vec::new();
        let mut episode = 0u64;
        let mut obs = audit_env.reset(cfg.env_seed_base);
        let mut episode_steps = 0usize;
        let stored: Vec<Transition> = replay.with(|buf| buf.iter_in_order().cloned().collect());
        for t in &stored {
            let r = audit_env.step(t.action).unwrap();
            audit.push((obs.clone(), t.action, r.reward, r.observation.clone(), r.terminal));
            episode_steps += 1;
            if r.terminal || episode_steps >= cfg.episode_cap {
                episode += 1;
                obs = audit_env.reset(cfg.env_seed_base.wrapping_add(episode));
                episode_steps = 0;
            } else {
                obs = r.observation;
            }
        }
        for (t, (s, a, r, ns, term)) in stored.iter().zip(audit.iter()) {
            assert_eq!(&t.state, s);
            assert_eq!(t.action, *a);
            assert_eq!(t.reward.to_bits(), r.to_bits());
            assert_eq!(&t.next_state, ns);
            assert_eq!(t.terminal, *term);
        }
    }

    #[test]
    fn fetch_count_tracks_sync_period() {
        for period in [1u64, 3, 7] {
            let (mut actor, replay, mut client, _server) = make(actor_cfg(period), 1);
            let mut sink = replay.clone();
            let steps = 500usize;
            for _ in 0..steps {
                actor.step(&mut sink, &mut client).unwrap();
            }
            let stats = actor.stats();
            let lower = (steps as u64).div_ceil(period);
            let upper = lower + stats.episodes;
            assert!(
                stats.fetches >= lower && stats.fetches <= upper,
                "period {period}: fetches {} outside [{lower}, {upper}]",
                stats.fetches
            );
        }
    }

    #[test]
    fn distinct_seeds_visit_distinct_states() {
        let visitation = |seed: u64| {
            let (mut actor, replay, mut client, _server) = make(actor_cfg(1), seed);
            let mut sink = replay.clone();
            for _ in 0..1000 {
                actor.step(&mut sink, &mut client).unwrap();
            }
            let mut histogram = std::collections::HashMap::new();
            replay.with(|buf| {
                for t in buf.iter_in_order() {
                    let state = t
                        .state
                        .iter()
                        .position(|&v| v == 1.0)
                        .unwrap_or(usize::MAX);
                    *histogram.entry((state, t.action)).or_insert(0usize) += 1;
                }
            });
            histogram
        };
        assert_ne!(visitation(100), visitation(200));
    }

    #[test]
    fn experience_accounting_across_actors() {
        // N actors for T steps each produce exactly N*T transitions.
        let n_act = 3u64;
        let t_steps = 400u64;
        let mut total = 0u64;
        for id in 0..n_act {
            let mut cfg = actor_cfg(1);
            cfg.actor_id = id as u32;
            let (mut actor, replay, mut client, _server) = make(cfg, id);
            let mut sink = replay.clone();
            for _ in 0..t_steps {
                actor.step(&mut sink, &mut client).unwrap();
            }
            total += actor.stats().steps;
        }
        assert_eq!(total, n_act * t_steps);
    }
}
