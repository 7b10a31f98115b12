//! Evaluation protocols.
//!
//! Two ways to vary the start state of a scored episode:
//!
//! - null-op starts: a random number of do-nothing actions before handing
//!   control to the agent; the whole episode's reward counts and the no-op
//!   steps count toward the step cap.
//! - human starts: replay a prefix of a recorded trajectory, then let the
//!   agent play out the rest; only post-handoff reward counts, and the
//!   prefix steps count toward the total cap.

use rand::rngs::StdRng;
use rand::Rng;

use crate::envs::{EnvError, Environment, ObservationStacker, QTable, Trajectory};
use crate::nn::QNetwork;
use crate::rl::argmax_lowest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    NullOp,
    HumanStarts,
}

#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub kind: ProtocolKind,
    /// Scored episodes under null-op starts.
    pub episodes: usize,
    /// Sampled prefixes under human starts.
    pub start_points: usize,
    /// Step cap per null-op episode, counting the initial no-ops.
    pub null_op_cap: usize,
    /// Total step cap per human-starts run, counting the replayed prefix.
    pub human_starts_total_cap: usize,
    pub max_initial_null_ops: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            kind: ProtocolKind::NullOp,
            episodes: 30,
            start_points: 100,
            null_op_cap: 1_000,
            human_starts_total_cap: 3_000,
            max_initial_null_ops: 30,
        }
    }
}

/// An evaluation-time policy; `reset` is called at every episode boundary.
pub trait Policy {
    fn reset(&mut self);
    fn act(&mut self, obs: &[f64]) -> usize;
}

/// Greedy on a Q-network, with the same observation stacking the actors use.
pub struct GreedyNetPolicy {
    net: QNetwork,
    stacker: ObservationStacker,
}

impl GreedyNetPolicy {
    pub fn new(net: QNetwork, stack_k: usize, obs_dim: usize) -> Self {
        GreedyNetPolicy {
            net,
            stacker: ObservationStacker::new(stack_k, obs_dim),
        }
    }
}

impl Policy for GreedyNetPolicy {
    fn reset(&mut self) {
        self.stacker.reset();
    }

    fn act(&mut self, obs: &[f64]) -> usize {
        let stacked = self.stacker.push(obs);
        let q = self.net.forward(&stacked).expect("policy/env dim mismatch");
        argmax_lowest(&q)
    }
}

/// Greedy on a tabular Q function over one-hot observations.
pub struct QTablePolicy {
    table: QTable,
}

impl QTablePolicy {
    pub fn new(table: QTable) -> Self {
        QTablePolicy { table }
    }
}

impl Policy for QTablePolicy {
    fn reset(&mut self) {}

    fn act(&mut self, obs: &[f64]) -> usize {
        let state = obs
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot observation");
        self.table.greedy(state)
    }
}

/// Uniform-random actions at the same decision cadence as trained agents.
pub struct RandomPolicy {
    n_actions: usize,
    rng: StdRng,
}

impl RandomPolicy {
    pub fn new(n_actions: usize, rng: StdRng) -> Self {
        RandomPolicy { n_actions, rng }
    }
}

impl Policy for RandomPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, _obs: &[f64]) -> usize {
        self.rng.random_range(0..self.n_actions)
    }
}

/// Mean episode score under null-op starts. Episode `e` resets the
/// environment with `seed_base + e`; the number of initial no-ops is drawn
/// uniformly from `0..=max_initial_null_ops`.
pub fn eval_null_op(
    policy: &mut dyn Policy,
    env: &mut dyn Environment,
    proto: &EvalProtocol,
    seed_base: u64,
    rng: &mut StdRng,
) -> Result<f64, EnvError> {
    let mut total = 0.0;
    for e in 0..proto.episodes {
        let mut obs = env.reset(seed_base.wrapping_add(e as u64));
        policy.reset();
        let null_ops = rng.random_range(0..=proto.max_initial_null_ops);
        let mut score = 0.0;
        let mut steps = 0usize;
        let mut terminal = false;
        for _ in 0..null_ops.min(proto.null_op_cap) {
            let r = env.step(env.null_action())?;
            score += r.reward;
            steps += 1;
            obs = r.observation;
            if r.terminal {
                terminal = true;
                break;
            }
        }
        while !terminal && steps < proto.null_op_cap {
            let action = policy.act(&obs);
            let r = env.step(action)?;
            score += r.reward;
            steps += 1;
            obs = r.observation;
            terminal = r.terminal;
        }
        total += score;
    }
    Ok(total / proto.episodes as f64)
}

/// Mean post-handoff score over start points sampled uniformly from a
/// recorded trajectory. The replayed prefix consumes step budget but
/// contributes no score.
pub fn eval_human_starts(
    policy: &mut dyn Policy,
    env: &mut dyn Environment,
    trajectory: &Trajectory,
    proto: &EvalProtocol,
    rng: &mut StdRng,
) -> Result<f64, EnvError> {
    if trajectory.env_name != env.name() {
        return Err(EnvError::TrajectoryMismatch(format!(
            "trajectory was recorded on '{}', evaluating on '{}'",
            trajectory.env_name,
            env.name()
        )));
    }
    if trajectory.is_empty() {
        return Err(EnvError::TrajectoryMismatch("empty trajectory".into()));
    }
    let mut total = 0.0;
    for _ in 0..proto.start_points {
        let prefix_len = rng.random_range(0..trajectory.len());
        let mut obs = env.reset(trajectory.seed);
        policy.reset();
        let mut steps = 0usize;
        let mut terminal = false;
        for step in trajectory.steps.iter().take(prefix_len.min(proto.human_starts_total_cap)) {
            let r = env.step(step.action as usize)?;
            steps += 1;
            obs = r.observation;
            if r.terminal {
                terminal = true;
                break;
            }
        }
        // Post-handoff score only.
        let mut score = 0.0;
        while !terminal && steps < proto.human_starts_total_cap {
            let action = policy.act(&obs);
            let r = env.step(action)?;
            score += r.reward;
            steps += 1;
            obs = r.observation;
            terminal = r.terminal;
        }
        total += score;
    }
    Ok(total / proto.start_points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{record_trajectory, value_iteration, ChainMdp, GridWorld};
    use rand::SeedableRng;

    fn chain_q_policy() -> QTablePolicy {
        let chain = ChainMdp::default();
        QTablePolicy::new(value_iteration(&chain, 0.9, 1e-10).unwrap())
    }

    #[test]
    fn zero_null_ops_deterministic_env_gives_identical_episodes() {
        // slip 0, greedy policy, no null-ops: every episode is the same walk.
        let mut env = ChainMdp::new(5, 0.0, -0.01);
        let mut policy = chain_q_policy();
        let proto = EvalProtocol {
            max_initial_null_ops: 0,
            episodes: 7,
            ..EvalProtocol::default()
        };
        let mut rng = StdRng::seed_from_u64(0);
        let score = eval_null_op(&mut policy, &mut env, &proto, 0, &mut rng).unwrap();
        // 4 right moves: 1.0 - 4 * 0.01
        assert!((score - 0.96).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_env_scores_zero() {
        let mut env = ChainMdp::new(5, 0.0, 0.0);
        // cap 3 cannot reach the goal bonus from the start
        let proto = EvalProtocol {
            episodes: 10,
            null_op_cap: 3,
            max_initial_null_ops: 2,
            ..EvalProtocol::default()
        };
        let mut policy = RandomPolicy::new(2, StdRng::seed_from_u64(1));
        let mut rng = StdRng::seed_from_u64(2);
        let score = eval_null_op(&mut policy, &mut env, &proto, 0, &mut rng).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn null_op_mean_matches_hand_rolled_loop() {
        // Oracle: replicate the protocol loop by hand on a 3-state chain and
        // compare the means exactly.
        let proto = EvalProtocol {
            episodes: 30,
            null_op_cap: 50,
            max_initial_null_ops: 5,
            ..EvalProtocol::default()
        };
        let seed_base = 77u64;

        let mut env = ChainMdp::new(3, 0.1, -0.01);
        let mut policy = chain_q_policy_3();
        let mut rng = StdRng::seed_from_u64(9);
        let got = eval_null_op(&mut policy, &mut env, &proto, seed_base, &mut rng).unwrap();

        let mut oracle_env = ChainMdp::new(3, 0.1, -0.01);
        let table = value_iteration(&ChainMdp::new(3, 0.1, -0.01), 0.9, 1e-10).unwrap();
        let mut oracle_rng = StdRng::seed_from_u64(9);
        let mut total = 0.0;
        for e in 0..proto.episodes {
            let mut obs = oracle_env.reset(seed_base + e as u64);
            let null_ops: usize = oracle_rng.random_range(0..=proto.max_initial_null_ops);
            let mut score = 0.0;
            let mut steps = 0usize;
            let mut terminal = false;
            for _ in 0..null_ops {
                let r = oracle_env.step(0).unwrap();
                score += r.reward;
                steps += 1;
                obs = r.observation;
                if r.terminal {
                    terminal = true;
                    break;
                }
            }
            while !terminal && steps < proto.null_op_cap {
                let s = obs.iter().position(|&v| v == 1.0).unwrap();
                let r = oracle_env.step(table.greedy(s)).unwrap();
                score += r.reward;
                steps += 1;
                obs = r.observation;
                terminal = r.terminal;
            }
            total += score;
        }
        let expected = total / proto.episodes as f64;
        assert_eq!(got.to_bits(), expected.to_bits());
    }

    fn chain_q_policy_3() -> QTablePolicy {
        let chain = ChainMdp::new(3, 0.1, -0.01);
        QTablePolicy::new(value_iteration(&chain, 0.9, 1e-10).unwrap())
    }

    #[test]
    fn human_starts_prefix_zero_equals_plain_rollout() {
        let mut env = ChainMdp::new(5, 0.0, -0.01);
        let mut recording_env = ChainMdp::new(5, 0.0, -0.01);
        let trajectory =
            record_trajectory(&mut recording_env, 3, 1, 100, |_| 1).unwrap();

        let proto = EvalProtocol {
            kind: ProtocolKind::HumanStarts,
            start_points: 5,
            human_starts_total_cap: 100,
            ..EvalProtocol::default()
        };
        // trajectory len is 4 (straight walk); force prefix 0 by stubbing
        // the rng: with len 4 the draw is 0..4, seed hunting is fragile, so
        // instead check against the no-prefix score bound: any prefix of a
        // deterministic optimal walk leaves score 1 - 0.01*(4 - prefix).
        let mut policy = chain_q_policy();
        let mut rng = StdRng::seed_from_u64(4);
        let got = eval_human_starts(&mut policy, &mut env, &trajectory, &proto, &mut rng).unwrap();
        // prefix p costs nothing to the agent; remaining walk scores
        // 1 - 0.01 * (4 - p), all within [0.97, 1.0]
        assert!(got > 0.96 && got <= 1.0, "score {got}");
    }

    #[test]
    fn human_starts_score_ignores_prefix_rewards() {
        // Double-accounting oracle: replay each sampled prefix by hand; the
        // protocol's score must equal the with-prefix total minus the
        // prefix's own rewards.
        let mut recording_env = ChainMdp::default();
        let trajectory = record_trajectory(&mut recording_env, 8, 1, 100, |_| 1).unwrap();
        let proto = EvalProtocol {
            kind: ProtocolKind::HumanStarts,
            start_points: 40,
            human_starts_total_cap: 200,
            ..EvalProtocol::default()
        };

        // Run the protocol and capture its per-start prefix draws by
        // repeating the same rng stream.
        let mut env = ChainMdp::default();
        let mut policy = chain_q_policy();
        let mut rng = StdRng::seed_from_u64(31);
        let got =
            eval_human_starts(&mut policy, &mut env, &trajectory, &proto, &mut rng).unwrap();

        let mut oracle_env = ChainMdp::default();
        let mut oracle_policy = chain_q_policy();
        let mut oracle_rng = StdRng::seed_from_u64(31);
        let mut total_excl = 0.0;
        for _ in 0..proto.start_points {
            let prefix_len: usize = oracle_rng.random_range(0..trajectory.len());
            let mut obs = oracle_env.reset(trajectory.seed);
            let mut with_prefix = 0.0;
            let mut prefix_only = 0.0;
            let mut steps = 0usize;
            let mut terminal = false;
            for step in trajectory.steps.iter().take(prefix_len) {
                let r = oracle_env.step(step.action as usize).unwrap();
                with_prefix += r.reward;
                prefix_only += r.reward;
                steps += 1;
                obs = r.observation;
                if r.terminal {
                    terminal = true;
                    break;
                }
            }
            while !terminal && steps < proto.human_starts_total_cap {
                let a = oracle_policy.act(&obs);
                let r = oracle_env.step(a).unwrap();
                with_prefix += r.reward;
                steps += 1;
                obs = r.observation;
                terminal = r.terminal;
            }
            total_excl += with_prefix - prefix_only;
        }
        let expected = total_excl / proto.start_points as f64;
        assert!((got - expected).abs() < 1e-12, "got {got}, oracle {expected}");
    }

    #[test]
    fn exhausted_budget_scores_zero() {
        let mut recording_env = ChainMdp::default();
        let trajectory = record_trajectory(&mut recording_env, 8, 1, 100, |_| 1).unwrap();
        let proto = EvalProtocol {
            kind: ProtocolKind::HumanStarts,
            start_points: 10,
            human_starts_total_cap: 1, // any prefix >= 1 exhausts the budget
            ..EvalProtocol::default()
        };
        let mut env = ChainMdp::default();
        let mut policy = chain_q_policy();
        let mut rng = StdRng::seed_from_u64(0);
        let score =
            eval_human_starts(&mut policy, &mut env, &trajectory, &proto, &mut rng).unwrap();
        // prefixes of length >= 1 leave no budget; prefix 0 leaves one step
        // which cannot reach the goal, so the score is at most a step cost.
        assert!(score <= 0.0, "score {score}");
    }

    #[test]
    fn trajectory_env_mismatch_is_an_error() {
        let mut recording_env = ChainMdp::default();
        let trajectory = record_trajectory(&mut recording_env, 8, 1, 100, |_| 1).unwrap();
        let mut env = GridWorld::default();
        let mut policy = RandomPolicy::new(4, StdRng::seed_from_u64(0));
        let proto = EvalProtocol::default();
        let mut rng = StdRng::seed_from_u64(0);
        assert!(matches!(
            eval_human_starts(&mut policy, &mut env, &trajectory, &proto, &mut rng),
            Err(EnvError::TrajectoryMismatch(_))
        ));
    }
}
