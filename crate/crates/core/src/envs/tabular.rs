use rand::rngs::StdRng;
use rand::Rng;

use super::{EnvError, Environment, Snapshot};

/// Exact dynamics of a finite MDP: `transitions(s, a)` lists
/// `(probability, next_state, reward, enters_terminal)` triples summing to
/// probability one. Terminal states list no transitions.
pub trait TabularDynamics {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn start_state(&self) -> usize;
    fn is_terminal_state(&self, s: usize) -> bool;
    fn transitions(&self, s: usize, a: usize) -> Vec<(f64, usize, f64, bool)>;
    /// The observation an [`Environment`] would emit in state `s`.
    fn observation_of(&self, s: usize) -> Vec<f64>;
}

/// A dense optimal action-value table, row-major over states.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn max_q(&self, s: usize) -> f64 {
        (0..self.n_actions)
            .map(|a| self.q(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, s: usize) -> usize {
        let mut best = 0;
        for a in 1..self.n_actions {
            if self.q(s, a) > self.q(s, best) {
                best = a;
            }
        }
        best
    }

    /// One Bellman backup of `self` at (s, a).
    fn backup(&self, mdp: &dyn TabularDynamics, gamma: f64, s: usize, a: usize) -> f64 {
        mdp.transitions(s, a)
            .iter()
            .map(|&(p, next, reward, terminal)| {
                p * (reward + if terminal { 0.0 } else { gamma * self.max_q(next) })
            })
            .sum()
    }

    /// Sup-norm Bellman residual of this table under the given dynamics.
    pub fn bellman_residual(&self, mdp: &dyn TabularDynamics, gamma: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..self.n_states {
            if mdp.is_terminal_state(s) {
                continue;
            }
            for a in 0..self.n_actions {
                worst = worst.max((self.backup(mdp, gamma, s, a) - self.q(s, a)).abs());
            }
        }
        worst
    }
}

/// Value iteration to a sup-norm Bellman residual below `tol`.
pub fn value_iteration(
    mdp: &dyn TabularDynamics,
    gamma: f64,
    tol: f64,
) -> Result<QTable, EnvError> {
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..1_000_000 {
        let mut next = q.clone();
        residual = 0.0;
        for s in 0..mdp.n_states() {
            if mdp.is_terminal_state(s) {
                continue;
            }
            for a in 0..mdp.n_actions() {
                let backed = q.backup(mdp, gamma, s, a);
                residual = residual.max((backed - q.q(s, a)).abs());
                next.set(s, a, backed);
            }
        }
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
    Err(EnvError::NonConvergent(residual))
}

/// Exact expected undiscounted score of the uniform-random policy over a
/// capped episode, by finite-horizon dynamic programming.
pub fn expected_random_return(mdp: &dyn TabularDynamics, step_cap: usize) -> f64 {
    let n = mdp.n_states();
    let mut value = vec![0.0f64; n]; // E[score | state, 0 steps left]
    for _ in 0..step_cap {
        let mut next = vec![0.0f64; n];
        for (s, slot) in next.iter_mut().enumerate() {
            if mdp.is_terminal_state(s) {
                continue;
            }
            let mut acc = 0.0;
            for a in 0..mdp.n_actions() {
                for (p, sn, r, terminal) in mdp.transitions(s, a) {
                    acc += p * (r + if terminal { 0.0 } else { value[sn] });
                }
            }
            *slot = acc / mdp.n_actions() as f64;
        }
        value = next;
    }
    value[mdp.start_state()]
}

/// Exact expected undiscounted score of the policy greedy on `table`, over
/// a capped episode.
pub fn greedy_policy_return(mdp: &dyn TabularDynamics, table: &QTable, step_cap: usize) -> f64 {
    let n = mdp.n_states();
    let mut value = vec![0.0f64; n];
    for _ in 0..step_cap {
        let mut next = vec![0.0f64; n];
        for (s, slot) in next.iter_mut().enumerate() {
            if mdp.is_terminal_state(s) {
                continue;
            }
            let a = table.greedy(s);
            let mut acc = 0.0;
            for (p, sn, r, terminal) in mdp.transitions(s, a) {
                acc += p * (r + if terminal { 0.0 } else { value[sn] });
            }
            *slot = acc;
        }
        value = next;
    }
    value[mdp.start_state()]
}

/// Roll uniform-random episodes and average their scores. Actions are drawn
/// at the same once-per-decision-step cadence as trained agents and honor
/// the same step cap. Episode `e` resets with `seed_base + e`, or restores
/// the injected start snapshot instead when one is given.
pub fn random_agent_rollout(
    env: &mut dyn Environment,
    episodes: usize,
    step_cap: usize,
    seed_base: u64,
    rng: &mut StdRng,
    start: Option<&Snapshot>,
) -> Result<f64, EnvError> {
    let mut total = 0.0;
    for e in 0..episodes {
        match start {
            Some(snap) => env.restore(snap)?,
            None => {
                env.reset(seed_base.wrapping_add(e as u64));
            }
        }
        let mut score = 0.0;
        for _ in 0..step_cap {
            let action = rng.random_range(0..env.action_count());
            let r = env.step(action)?;
            score += r.reward;
            if r.terminal {
                break;
            }
        }
        total += score;
    }
    Ok(total / episodes as f64)
}
