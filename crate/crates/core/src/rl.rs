//! RL domain types and the DQN update quantities.
//!
//! The loss for one transition is the squared Bellman residual
//! `(y - Q(s,a))^2` where `y` is computed against a frozen target network.
//! [`dqn_loss_and_upstream`] returns the residual itself as the `upstream`
//! scalar: the per-sample contribution to the descent gradient of the
//! half-squared loss is `-upstream * grad Q(s,a)`, which is what learners
//! feed to [`crate::nn::QNetwork::backward`] (negated) and push upstream.

use rand::Rng;
use thiserror::Error;

use crate::nn::{NnError, QNetwork};

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid epsilon {0}, must lie in [0,1]")]
    InvalidEpsilon(f64),
    #[error("invalid discount {0}, must lie in [0,1]")]
    InvalidDiscount(f64),
    #[error("invalid epsilon schedule: {0}")]
    InvalidSchedule(String),
}

/// One experience tuple as generated by an actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub actor_id: u32,
    pub step: u64,
}

/// Discount factor newtype; construction enforces gamma in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discount(f64);

impl Discount {
    pub fn new(gamma: f64) -> Result<Self, RlError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(RlError::InvalidDiscount(gamma));
        }
        Ok(Discount(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Linear annealing of the exploration rate over global updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, horizon: u64) -> Result<Self, RlError> {
        if !(0.0..=1.0).contains(&end) || !(0.0..=1.0).contains(&start) || end > start {
            return Err(RlError::InvalidSchedule(format!(
                "need 0 <= end <= start <= 1, got start={start} end={end}"
            )));
        }
        if horizon == 0 {
            return Err(RlError::InvalidSchedule("horizon must be > 0".into()));
        }
        Ok(EpsilonSchedule { start, end, horizon })
    }

    /// Exploration rate after `global_updates` accepted server updates:
    /// linear from `start` to `end`, clamped at `end` beyond the horizon.
    pub fn epsilon_at(&self, global_updates: u64) -> f64 {
        if global_updates >= self.horizon {
            return self.end;
        }
        let frac = global_updates as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// The DQN target: `r` on terminal transitions, else
/// `r + gamma * max_a' Q(s', a')` under the target network.
pub fn bellman_target(
    t: &Transition,
    target_net: &QNetwork,
    gamma: Discount,
) -> Result<f64, RlError> {
    if t.terminal {
        return Ok(t.reward);
    }
    let q_next = target_net.forward(&t.next_state)?;
    let max_q = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(t.reward + gamma.value() * max_q)
}

/// Loss and upstream scalar for one transition.
///
/// Returns `(loss, upstream, y)` with `delta = y - Q(s,a)`, `loss = delta^2`
/// and `upstream = delta`. Applying `+eta * upstream * grad Q` moves the
/// parameters toward the target, which is the descent direction of the loss.
pub fn dqn_loss_and_upstream(
    t: &Transition,
    current: &QNetwork,
    target: &QNetwork,
    gamma: Discount,
) -> Result<(f64, f64, f64), RlError> {
    if t.action >= current.n_actions() {
        return Err(RlError::Nn(NnError::ActionRange {
            action: t.action,
            actions: current.n_actions(),
        }));
    }
    let y = bellman_target(t, target, gamma)?;
    let q = current.forward(&t.state)?[t.action];
    let delta = y - q;
    Ok((delta * delta, delta, y))
}

/// Epsilon-greedy action selection with lowest-index tie-breaking on the
/// greedy branch. Consumes one uniform draw, plus one more when exploring.
pub fn select_action<R: Rng>(
    net: &QNetwork,
    state: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, RlError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(RlError::InvalidEpsilon(epsilon));
    }
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.n_actions()));
    }
    let q = net.forward(state)?;
    Ok(argmax_lowest(&q))
}

/// Index of the maximum value, lowest index on ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Activation, ParamVector};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn transition(reward: f64, terminal: bool, dim: usize) -> Transition {
        Transition {
            state: vec![0.25; dim],
            action: 0,
            reward,
            next_state: vec![0.5; dim],
            terminal,
            actor_id: 0,
            step: 0,
        }
    }

    /// Single linear layer rigged so that max_a Q(next_state, a) is `max_q`.
    fn net_with_max_q(dim: usize, max_q: f64) -> QNetwork {
        let layers = vec![LayerSpec {
            in_dim: dim,
            out_dim: 2,
            activation: Activation::Identity,
        }];
        let layout = QNetwork::layout_for(&layers).unwrap();
        let mut values = vec![0.0; layout.total_len()];
        // bias of action 1 = max_q, everything else zero
        values[2 * dim + 1] = max_q;
        let params = ParamVector::new(layout, values).unwrap();
        QNetwork::from_params(layers, params).unwrap()
    }

    #[test]
    fn terminal_target_is_reward() {
        let net = net_with_max_q(3, 7.0);
        let t = transition(5.0, true, 3);
        let y = bellman_target(&t, &net, Discount::new(0.9).unwrap()).unwrap();
        assert_eq!(y, 5.0);
    }

    #[test]
    fn nonterminal_target_formula() {
        let net = net_with_max_q(3, 2.0);
        let t = transition(1.0, false, 3);
        let y = bellman_target(&t, &net, Discount::new(0.9).unwrap()).unwrap();
        assert!((y - 2.8).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_is_myopic() {
        let net = net_with_max_q(3, 123.0);
        let t = transition(4.0, false, 3);
        let y = bellman_target(&t, &net, Discount::new(0.0).unwrap()).unwrap();
        assert_eq!(y, 4.0);
    }

    #[test]
    fn gamma_one_zero_target_returns_reward() {
        let zero = QNetwork::zeros(QNetwork::mlp_spec(3, &[4], 2)).unwrap();
        let one = Discount::new(1.0).unwrap();
        for (r, terminal) in [(0.0, false), (-2.5, false), (3.25, true)] {
            let t = transition(r, terminal, 3);
            assert_eq!(bellman_target(&t, &zero, one).unwrap(), r);
        }
    }

    #[test]
    fn loss_and_upstream_values() {
        // Self-consistent: Q(s,a) == y -> zero loss, zero upstream.
        let net = net_with_max_q(3, 0.0);
        let mut t = transition(0.0, true, 3);
        let g = Discount::new(0.9).unwrap();
        let (loss, upstream, y) = dqn_loss_and_upstream(&t, &net, &net, g).unwrap();
        assert_eq!((loss, upstream, y), (0.0, 0.0, 0.0));

        // y = 2.8, Q(s,a) = 1.8 -> loss 1, upstream 1.
        let target = net_with_max_q(3, 2.0);
        let mut current = net_with_max_q(3, 0.0);
        // action-0 bias of the current net = 1.8
        let idx = current.params().layout().entry("l0.b").unwrap().offset;
        let mut params = current.flatten_copy();
        params.values_mut()[idx] = 1.8;
        current.sync_from(&params).unwrap();
        t.terminal = false;
        t.reward = 1.0;
        let (loss, upstream, y) = dqn_loss_and_upstream(&t, &current, &target, g).unwrap();
        assert!((y - 2.8).abs() < 1e-12);
        assert!((loss - 1.0).abs() < 1e-12);
        assert!((upstream - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_nonnegative_and_zero_iff_upstream_zero() {
        let current = QNetwork::seeded(QNetwork::mlp_spec(3, &[6], 2), 5).unwrap();
        let target = QNetwork::seeded(QNetwork::mlp_spec(3, &[6], 2), 6).unwrap();
        let g = Discount::new(0.9).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        for step in 0..200 {
            let t = Transition {
                state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: rng.random_range(0..2),
                reward: rng.random_range(-1.0..1.0),
                next_state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                terminal: rng.random::<f64>() < 0.1,
                actor_id: 0,
                step,
            };
            let (loss, upstream, _) = dqn_loss_and_upstream(&t, &current, &target, g).unwrap();
            assert!(loss >= 0.0);
            assert_eq!(loss == 0.0, upstream == 0.0);
        }
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        // Descent gradient of 0.5*(y - Q(s,a))^2 with y frozen is
        // -upstream * grad Q; check against central differences.
        let layers = QNetwork::mlp_spec(3, &[8, 6], 2);
        let current = QNetwork::seeded(layers.clone(), 31).unwrap();
        let target = QNetwork::seeded(layers.clone(), 32).unwrap();
        let g = Discount::new(0.9).unwrap();
        let t = Transition {
            state: vec![0.3, -0.8, 0.5],
            action: 1,
            reward: 0.7,
            next_state: vec![-0.2, 0.4, 0.9],
            terminal: false,
            actor_id: 0,
            step: 0,
        };
        let trace = current.forward_trace(&t.state).unwrap();
        assert!(
            trace.min_abs_preactivation() > 1e-4,
            "instance too close to a rectifier kink for finite differences"
        );

        let (_, upstream, y) = dqn_loss_and_upstream(&t, &current, &target, g).unwrap();
        let analytic = current.backward(&t.state, t.action, -upstream).unwrap();

        let h = 1e-6;
        let base = current.flatten_copy();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.values_mut()[i] += h;
            let mut minus = base.clone();
            minus.values_mut()[i] -= h;
            let net_p = QNetwork::from_params(layers.clone(), plus).unwrap();
            let net_m = QNetwork::from_params(layers.clone(), minus).unwrap();
            let lp = 0.5 * (y - net_p.forward(&t.state).unwrap()[t.action]).powi(2);
            let lm = 0.5 * (y - net_m.forward(&t.state).unwrap()[t.action]).powi(2);
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic.values()[i];
            let scale = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / scale < 1e-5,
                "param {i}: analytic {a}, fd {fd}"
            );
        }
    }

    #[test]
    fn epsilon_schedule_endpoints_and_midpoint() {
        let sched = EpsilonSchedule::new(1.0, 0.1, 1_000_000).unwrap();
        assert_eq!(sched.epsilon_at(0), 1.0);
        assert_eq!(sched.epsilon_at(1_000_000), 0.1);
        assert_eq!(sched.epsilon_at(2_000_000), 0.1);
        assert!((sched.epsilon_at(500_000) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn epsilon_schedule_is_monotone() {
        let sched = EpsilonSchedule::new(0.9, 0.05, 1000).unwrap();
        let mut prev = f64::INFINITY;
        for u in (0..2000).step_by(7) {
            let e = sched.epsilon_at(u);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(EpsilonSchedule::new(0.1, 0.5, 10).is_err());
        assert!(EpsilonSchedule::new(1.2, 0.1, 10).is_err());
        assert!(EpsilonSchedule::new(1.0, -0.1, 10).is_err());
        assert!(EpsilonSchedule::new(1.0, 0.1, 0).is_err());
        assert!(Discount::new(1.5).is_err());
        assert!(Discount::new(-0.1).is_err());
    }

    #[test]
    fn greedy_selection_and_tie_break() {
        let net3 = net_with_max_q(2, 0.9); // Q = [0, 0.9] via bias on action 1
        let mut rng = StdRng::seed_from_u64(3);
        let a = select_action(&net3, &[0.0, 0.0], 0.0, &mut rng).unwrap();
        assert_eq!(a, 1);

        let tie = QNetwork::zeros(QNetwork::mlp_spec(2, &[], 2)).unwrap();
        let a = select_action(&tie, &[1.0, 1.0], 0.0, &mut rng).unwrap();
        assert_eq!(a, 0, "ties break to the lowest index");
    }

    #[test]
    fn argmax_invariant_under_constant_shift() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..100 {
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let shifted: Vec<f64> = q.iter().map(|v| v + 3.75).collect();
            assert_eq!(argmax_lowest(&q), argmax_lowest(&shifted));
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = QNetwork::seeded(QNetwork::mlp_spec(2, &[4], 3), 44).unwrap();
        let mut rng = StdRng::seed_from_u64(123);
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let a = select_action(&net, &[0.1, 0.2], 1.0, &mut rng).unwrap();
            counts[a] += 1;
        }
        let expected = n as f64 / 3.0;
        // each frequency within 3 sigma of the uniform law
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "count {c} outside 3 sigma of {expected}"
            );
        }
        // chi-square test, df = 2, must not reject at the 1% level
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(stat < 9.21, "chi-square {stat} rejects uniformity");
    }

    #[test]
    fn invalid_epsilon_is_an_error() {
        let net = QNetwork::zeros(QNetwork::mlp_spec(2, &[], 2)).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        assert!(select_action(&net, &[0.0, 0.0], 1.5, &mut rng).is_err());
    }
}
