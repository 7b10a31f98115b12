use crate::seed::SplitMix64;

use super::tabular::TabularDynamics;
use super::{EnvError, Environment, Snapshot, StepResult};

const SNAPSHOT_VERSION: u32 = 1;

/// A slippery corridor: states `0..n`, start at the left end, episode ends
/// on reaching the right end.
///
/// Actions: 0 = left, 1 = right. With probability `slip` the move is
/// inverted. Every step costs `step_cost`; entering the right terminal adds
/// a bonus of 1. Observations are one-hot state indicators. The left action
/// at the start state walks into the wall, so it doubles as the null action.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    n_states: usize,
    slip: f64,
    step_cost: f64,
    position: usize,
    rng: SplitMix64,
    done: bool,
    started: bool,
}

impl ChainMdp {
    pub fn new(n_states: usize, slip: f64, step_cost: f64) -> Self {
        assert!(n_states >= 2, "chain needs at least two states");
        assert!((0.0..=1.0).contains(&slip));
        ChainMdp {
            n_states,
            slip,
            step_cost,
            position: 0,
            rng: SplitMix64::new(0),
            done: false,
            started: false,
        }
    }

    fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    fn goal(&self) -> usize {
        self.n_states - 1
    }
}

impl Default for ChainMdp {
    /// The 5-state chain with 10% slip used throughout the test oracles.
    fn default() -> Self {
        ChainMdp::new(5, 0.1, -0.01)
    }
}

impl Environment for ChainMdp {
    fn name(&self) -> &'static str {
        "chain"
    }

    fn action_count(&self) -> usize {
        2
    }

    fn observation_dim(&self) -> usize {
        self.n_states
    }

    fn null_action(&self) -> usize {
        0
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.position = 0;
        self.rng = SplitMix64::new(seed);
        self.done = false;
        self.started = true;
        self.one_hot(0)
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.done || !self.started {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 2 {
            return Err(EnvError::InvalidAction { action, actions: 2 });
        }
        let slipped = self.rng.next_f64() < self.slip;
        let go_right = (action == 1) != slipped;
        let next = if go_right {
            (self.position + 1).min(self.goal())
        } else {
            self.position.saturating_sub(1)
        };
        let terminal = next == self.goal();
        let reward = self.step_cost + if terminal { 1.0 } else { 0.0 };
        self.position = next;
        self.done = terminal;
        Ok(StepResult {
            observation: self.one_hot(next),
            reward,
            terminal,
        })
    }

    fn snapshot(&self) -> Snapshot {
        let mut data = Vec::with_capacity(8 + 8 + 2);
        data.extend_from_slice(&(self.position as u64).to_le_bytes());
        data.extend_from_slice(&self.rng.state().to_le_bytes());
        data.push(self.done as u8);
        data.push(self.started as u8);
        Snapshot {
            env_name: "chain".into(),
            version: SNAPSHOT_VERSION,
            data,
        }
    }

    fn restore(&mut self, snap: &Snapshot) -> Result<(), EnvError> {
        if snap.env_name != "chain" || snap.version != SNAPSHOT_VERSION {
            return Err(EnvError::SnapshotMismatch(format!(
                "{} v{}",
                snap.env_name, snap.version
            )));
        }
        if snap.data.len() != 18 {
            return Err(EnvError::SnapshotMismatch("bad payload size".into()));
        }
        let position = u64::from_le_bytes(snap.data[0..8].try_into().expect("8 bytes")) as usize;
        if position >= self.n_states {
            return Err(EnvError::SnapshotMismatch("position out of range".into()));
        }
        self.position = position;
        self.rng = SplitMix64::from_state(u64::from_le_bytes(
            snap.data[8..16].try_into().expect("8 bytes"),
        ));
        self.done = snap.data[16] != 0;
        self.started = snap.data[17] != 0;
        Ok(())
    }
}

impl TabularDynamics for ChainMdp {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn start_state(&self) -> usize {
        0
    }

    fn is_terminal_state(&self, s: usize) -> bool {
        s == self.goal()
    }

    fn transitions(&self, s: usize, a: usize) -> Vec<(f64, usize, f64, bool)> {
        if self.is_terminal_state(s) {
            return Vec::new();
        }
        let dest = |go_right: bool| -> (usize, f64, bool) {
            let next = if go_right {
                (s + 1).min(self.goal())
            } else {
                s.saturating_sub(1)
            };
            let terminal = next == self.goal();
            let reward = self.step_cost + if terminal { 1.0 } else { 0.0 };
            (next, reward, terminal)
        };
        let intended = dest(a == 1);
        let slipped = dest(a != 1);
        if self.slip == 0.0 {
            let (n, r, t) = intended;
            return vec![(1.0, n, r, t)];
        }
        let (ni, ri, ti) = intended;
        let (ns, rs, ts) = slipped;
        vec![(1.0 - self.slip, ni, ri, ti), (self.slip, ns, rs, ts)]
    }

    fn observation_of(&self, s: usize) -> Vec<f64> {
        self.one_hot(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_chain_walk() {
        let mut env = ChainMdp::new(5, 0.0, -0.01);
        let obs = env.reset(0);
        assert_eq!(obs, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let mut total = 0.0;
        for _ in 0..3 {
            let r = env.step(1).unwrap();
            assert!(!r.terminal);
            total += r.reward;
        }
        let last = env.step(1).unwrap();
        assert!(last.terminal);
        total += last.reward;
        assert!((total - (1.0 - 0.04)).abs() < 1e-12);
    }

    #[test]
    fn left_at_start_stays_put() {
        let mut env = ChainMdp::new(5, 0.0, -0.01);
        env.reset(0);
        let r = env.step(0).unwrap();
        assert_eq!(r.observation, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(!r.terminal);
    }

    #[test]
    fn step_after_terminal_is_an_error() {
        let mut env = ChainMdp::new(2, 0.0, 0.0);
        env.reset(0);
        let r = env.step(1).unwrap();
        assert!(r.terminal);
        assert!(matches!(env.step(1), Err(EnvError::EpisodeOver)));
        env.reset(1);
        assert!(env.step(0).is_ok());
    }

    #[test]
    fn step_before_reset_is_an_error() {
        let mut env = ChainMdp::default();
        assert!(matches!(env.step(0), Err(EnvError::EpisodeOver)));
    }

    #[test]
    fn seeded_episodes_replay_exactly() {
        let run = |seed: u64| {
            let mut env = ChainMdp::default();
            env.reset(seed);
            let mut stream = Vec::new();
            for i in 0..50 {
                match env.step(i % 2) {
                    Ok(r) => {
                        let done = r.terminal;
                        stream.push((r.observation, r.reward.to_bits(), r.terminal));
                        if done {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
            stream
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut env = ChainMdp::default();
        env.reset(3);
        env.step(1).unwrap();
        env.step(1).unwrap();
        let snap = env.snapshot();

        let replay = |env: &mut ChainMdp| {
            let mut stream = Vec::new();
            while let Ok(r) = env.step(1) {
                let done = r.terminal;
                stream.push((r.observation, r.reward.to_bits(), r.terminal));
                if done {
                    break;
                }
            }
            stream
        };

        let first = replay(&mut env);
        let mut other = ChainMdp::default();
        other.restore(&snap).unwrap();
        let second = replay(&mut other);
        assert_eq!(first, second);
    }

    #[test]
    fn snapshot_rejects_wrong_env() {
        let mut env = ChainMdp::default();
        let mut snap = env.snapshot();
        snap.env_name = "gridworld".into();
        assert!(matches!(
            env.restore(&snap),
            Err(EnvError::SnapshotMismatch(_))
        ));
    }

    #[test]
    fn transition_probabilities_sum_to_one() {
        let env = ChainMdp::default();
        for s in 0..4 {
            for a in 0..2 {
                let total: f64 = env.transitions(s, a).iter().map(|t| t.0).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        assert!(env.transitions(4, 0).is_empty());
    }
}
