use rand::rngs::StdRng;
use rand::Rng;

use crate::envs::{
    env_by_name, record_trajectory, tabular_by_name, value_iteration, Trajectory,
};

use super::HarnessError;

/// Record a near-optimal trajectory: greedy on the exact Q* table with an
/// `epsilon` chance of a random action, so recorded games visit more than
/// the single optimal line. Stands in for expert gameplay as the source of
/// start points for the human-starts protocol.
pub fn record_expert_trajectory(
    env_name: &str,
    gamma: f64,
    seed: u64,
    step_cap: usize,
    epsilon: f64,
    rng: &mut StdRng,
) -> Result<Trajectory, HarnessError> {
    let mdp = tabular_by_name(env_name)
        .ok_or_else(|| HarnessError::Config(format!("unknown env '{env_name}'")))?;
    let table = value_iteration(mdp.as_ref(), gamma, 1e-10)?;
    let mut env = env_by_name(env_name)
        .ok_or_else(|| HarnessError::Config(format!("unknown env '{env_name}'")))?;
    let n_actions = env.action_count();
    let trajectory = record_trajectory(env.as_mut(), seed, 1, step_cap, |obs| {
        if rng.random::<f64>() < epsilon {
            rng.random_range(0..n_actions)
        } else {
            let state = obs.iter().position(|&v| v == 1.0).expect("one-hot");
            table.greedy(state)
        }
    })?;
    Ok(trajectory)
}
