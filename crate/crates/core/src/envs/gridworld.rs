use crate::seed::SplitMix64;

use super::tabular::TabularDynamics;
use super::{EnvError, Environment, Snapshot, StepResult};

const SNAPSHOT_VERSION: u32 = 1;
/// up, down, left, right as (dy, dx)
const MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// A slippery gridworld: start in the top-left corner, terminal goal in the
/// bottom-right. With probability `slip` the move is replaced by one of the
/// two perpendicular directions (half each); moves off the grid stay put.
/// Step cost plus a goal-entry bonus of 1; one-hot cell observations.
/// Action 0 (up) walks into the wall at the start, so it is the null action.
#[derive(Debug, Clone)]
pub struct GridWorld {
    width: usize,
    height: usize,
    slip: f64,
    step_cost: f64,
    cell: usize,
    rng: SplitMix64,
    done: bool,
    started: bool,
}

impl GridWorld {
    pub fn new(width: usize, height: usize, slip: f64, step_cost: f64) -> Self {
        assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
        assert!((0.0..=1.0).contains(&slip));
        GridWorld {
            width,
            height,
            slip,
            step_cost,
            cell: 0,
            rng: SplitMix64::new(0),
            done: false,
            started: false,
        }
    }

    fn goal(&self) -> usize {
        self.width * self.height - 1
    }

    fn one_hot(&self, cell: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.width * self.height];
        v[cell] = 1.0;
        v
    }

    fn move_from(&self, cell: usize, direction: usize) -> usize {
        let (dy, dx) = MOVES[direction];
        let y = cell / self.width;
        let x = cell % self.width;
        let ny = y as i64 + dy;
        let nx = x as i64 + dx;
        if ny < 0 || nx < 0 || ny >= self.height as i64 || nx >= self.width as i64 {
            cell
        } else {
            ny as usize * self.width + nx as usize
        }
    }

    /// The two directions perpendicular to `direction`.
    fn perpendicular(direction: usize) -> [usize; 2] {
        if direction < 2 {
            [2, 3]
        } else {
            [0, 1]
        }
    }
}

impl Default for GridWorld {
    /// The 4x4 grid with 10% slip used by the scaling experiments.
    fn default() -> Self {
        GridWorld::new(4, 4, 0.1, -0.01)
    }
}

impl Environment for GridWorld {
    fn name(&self) -> &'static str {
        "gridworld"
    }

    fn action_count(&self) -> usize {
        4
    }

    fn observation_dim(&self) -> usize {
        self.width * self.height
    }

    fn null_action(&self) -> usize {
        0
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.cell = 0;
        self.rng = SplitMix64::new(seed);
        self.done = false;
        self.started = true;
        self.one_hot(0)
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.done || !self.started {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 4 {
            return Err(EnvError::InvalidAction { action, actions: 4 });
        }
        let direction = if self.rng.next_f64() < self.slip {
            let side = Self::perpendicular(action);
            if self.rng.next_f64() < 0.5 {
                side[0]
            } else {
                side[1]
            }
        } else {
            action
        };
        let next = self.move_from(self.cell, direction);
        let terminal = next == self.goal();
        let reward = self.step_cost + if terminal { 1.0 } else { 0.0 };
        self.cell = next;
        self.done = terminal;
        Ok(StepResult {
            observation: self.one_hot(next),
            reward,
            terminal,
        })
    }

    fn snapshot(&self) -> Snapshot {
        let mut data = Vec::with_capacity(18);
        data.extend_from_slice(&(self.cell as u64).to_le_bytes());
        data.extend_from_slice(&self.rng.state().to_le_bytes());
        data.push(self.done as u8);
        data.push(self.started as u8);
        Snapshot {
            env_name: "gridworld".into(),
            version: SNAPSHOT_VERSION,
            data,
        }
    }

    fn restore(&mut self, snap: &Snapshot) -> Result<(), EnvError> {
        if snap.env_name != "gridworld" || snap.version != SNAPSHOT_VERSION {
            return Err(EnvError::SnapshotMismatch(format!(
                "{} v{}",
                snap.env_name, snap.version
            )));
        }
        if snap.data.len() != 18 {
            return Err(EnvError::SnapshotMismatch("bad payload size".into()));
        }
        let cell = u64::from_le_bytes(snap.data[0..8].try_into().expect("8 bytes")) as usize;
        if cell >= self.width * self.height {
            return Err(EnvError::SnapshotMismatch("cell out of range".into()));
        }
        self.cell = cell;
        self.rng = SplitMix64::from_state(u64::from_le_bytes(
            snap.data[8..16].try_into().expect("8 bytes"),
        ));
        self.done = snap.data[16] != 0;
        self.started = snap.data[17] != 0;
        Ok(())
    }
}

impl TabularDynamics for GridWorld {
    fn n_states(&self) -> usize {
        self.width * self.height
    }

    fn n_actions(&self) -> usize {
        4
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
        let outcome = |direction: usize| -> (usize, f64, bool) {
            let next = self.move_from(s, direction);
            let terminal = next == self.goal();
            let reward = self.step_cost + if terminal { 1.0 } else { 0.0 };
            (next, reward, terminal)
        };
        let mut out = Vec::with_capacity(3);
        let (n, r, t) = outcome(a);
        out.push((1.0 - self.slip, n, r, t));
        if self.slip > 0.0 {
            for side in Self::perpendicular(a) {
                let (n, r, t) = outcome(side);
                out.push((self.slip / 2.0, n, r, t));
            }
        }
        out
    }

    fn observation_of(&self, s: usize) -> Vec<f64> {
        self.one_hot(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walls_block_movement() {
        let mut env = GridWorld::new(4, 4, 0.0, -0.01);
        env.reset(0);
        // up from the start is a wall
        let r = env.step(0).unwrap();
        assert_eq!(r.observation[0], 1.0);
        // left as well
        let r = env.step(2).unwrap();
        assert_eq!(r.observation[0], 1.0);
    }

    #[test]
    fn shortest_path_reaches_goal() {
        let mut env = GridWorld::new(4, 4, 0.0, -0.01);
        env.reset(0);
        let mut total = 0.0;
        let mut terminal = false;
        for action in [3, 3, 3, 1, 1, 1] {
            let r = env.step(action).unwrap();
            total += r.reward;
            terminal = r.terminal;
        }
        assert!(terminal);
        assert!((total - (1.0 - 0.06)).abs() < 1e-12);
    }

    #[test]
    fn slip_probabilities_sum_to_one() {
        let env = GridWorld::default();
        let goal = env.n_states() - 1;
        for s in 0..goal {
            for a in 0..4 {
                let total: f64 = env.transitions(s, a).iter().map(|t| t.0).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        assert!(env.transitions(goal, 0).is_empty());
    }

    #[test]
    fn snapshot_round_trip_replays_identically() {
        let mut env = GridWorld::default();
        env.reset(11);
        for a in [3, 1, 3] {
            env.step(a).unwrap();
        }
        let snap = env.snapshot();
        let script = [3, 1, 1, 3, 0, 1, 3, 1];
        let play = |env: &mut GridWorld| {
            let mut stream = Vec::new();
            for &a in &script {
                match env.step(a) {
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
        let first = play(&mut env);
        let mut other = GridWorld::default();
        other.restore(&snap).unwrap();
        assert_eq!(first, play(&mut other));
    }
}
