//! Standalone single-process reference loop.
//!
//! This is the oracle for the serial-equivalence check: the full acting and
//! learning algorithm written as one straight-line loop with no transport,
//! no parameter server and no shared replay machinery. Only the network
//! math primitives (forward/backward, target and loss scalars, action
//! selection) are shared with the system under test; those are validated
//! separately by finite differences. Ring-buffer storage, minibatch
//! aggregation, the AdaGrad update and all bookkeeping are reimplemented
//! inline, in the same operation order the distributed runtime documents.

use distdqn::envs::env_by_name;
use distdqn::harness::RunConfig;
use distdqn::nn::QNetwork;
use distdqn::rl::{dqn_loss_and_upstream, select_action, Discount, Transition};
use distdqn::seed::{derive_seed, stream_rng};
use rand::Rng;

/// FNV-1a over the parameter bit patterns; the same digest is applied to
/// the system's fetched parameters.
pub fn param_digest(values: &[f64]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut h = FNV_OFFSET;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

pub struct SerialTrace {
    /// Digest of the master parameters after every step.
    pub digests: Vec<u64>,
    pub final_params: Vec<f64>,
    pub versions: u64,
}

/// Run the reference loop for `steps` acting steps and digest the master
/// parameter vector after each one.
#[allow(clippy::explicit_counter_loop)] // total_steps is the actor's step id, not a loop index
pub fn run_serial_reference(cfg: &RunConfig, steps: usize) -> SerialTrace {
    assert!(cfg.max_delay.is_none(), "reference assumes no staleness filter");
    assert!(!cfg.rejection, "reference assumes the outlier filter is off");
    assert_eq!(cfg.stack_k, 1, "reference runs unstacked observations");

    let mut env = env_by_name(&cfg.env).expect("known env");
    let layers = QNetwork::mlp_spec(env.observation_dim(), &cfg.hidden, env.action_count());
    let gamma = Discount::new(cfg.gamma).expect("valid gamma");
    let schedule = cfg.epsilon_schedule().expect("valid schedule");

    // Master parameters and optimizer state, flat over the whole vector.
    let init = QNetwork::seeded(layers.clone(), derive_seed(cfg.seed, "init")).expect("net");
    let mut master: Vec<f64> = init.params().values().to_vec();
    let mut accumulators = vec![0.0f64; master.len()];

    // Replicas: behavior network, learner network, frozen target.
    let mut policy_net = init.clone();
    let mut learner_net = init.clone();
    let mut target_net = init.clone();

    let mut actor_rng = stream_rng(cfg.seed, "actor.0");
    let mut sample_rng = stream_rng(cfg.seed, "sample.0");
    let env_seed_base = derive_seed(cfg.seed, "env.0");

    // Inline ring buffer.
    let mut ring: Vec<Transition> = Vec::with_capacity(cfg.replay_capacity);
    let mut write_cursor = 0usize;

    let mut version = 0u64;
    let mut policy_version = 0u64;
    let mut last_target_sync = 0u64;
    let mut episodes = 0u64;
    let mut episode_steps = 0usize;
    let mut steps_since_sync = 0u64;
    let mut needs_reset = true;
    let mut total_steps = 0u64;
    let mut obs: Vec<f64> = Vec::new();

    let mut digests = Vec::with_capacity(steps);

    let sync_net = |net: &mut QNetwork, master: &[f64]| {
        let mut params = net.flatten_copy();
        params.values_mut().copy_from_slice(master);
        net.sync_from(&params).expect("layout");
    };

    for _ in 0..steps {
        // --- acting ---
        if needs_reset {
            obs = env.reset(env_seed_base.wrapping_add(episodes));
            episode_steps = 0;
            steps_since_sync = 0;
            needs_reset = false;
        }
        if steps_since_sync.is_multiple_of(cfg.sync_period) {
            sync_net(&mut policy_net, &master);
            policy_version = version;
        }
        steps_since_sync += 1;
        let epsilon = schedule.epsilon_at(policy_version);
        let action = select_action(&policy_net, &obs, epsilon, &mut actor_rng).expect("action");
        let result = env.step(action).expect("env step");
        let transition = Transition {
            state: obs.clone(),
            action,
            reward: result.reward,
            next_state: result.observation.clone(),
            terminal: result.terminal,
            actor_id: 0,
            step: total_steps,
        };
        if ring.len() < cfg.replay_capacity {
            ring.push(transition);
        } else {
            ring[write_cursor] = transition;
        }
        write_cursor = (write_cursor + 1) % cfg.replay_capacity;
        obs = result.observation;
        episode_steps += 1;
        total_steps += 1;
        if result.terminal || episode_steps >= cfg.episode_cap {
            episodes += 1;
            needs_reset = true;
        }

        // --- learning ---
        sync_net(&mut learner_net, &master);
        if ring.len() >= cfg.min_fill {
            let mut grad = vec![0.0f64; master.len()];
            let mut batch = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let idx = sample_rng.random_range(0..ring.len());
                batch.push(ring[idx].clone());
            }
            for t in &batch {
                let (_loss, upstream, _y) =
                    dqn_loss_and_upstream(t, &learner_net, &target_net, gamma).expect("loss");
                let g = learner_net
                    .backward(&t.state, t.action, -upstream)
                    .expect("backward");
                for (acc, gi) in grad.iter_mut().zip(g.values()) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / cfg.batch as f64;
            for g in &mut grad {
                *g *= scale;
            }
            // AdaGrad descent step on the master vector.
            for ((p, g), acc) in master
                .iter_mut()
                .zip(grad.iter())
                .zip(accumulators.iter_mut())
            {
                *acc += g * g;
                *p -= cfg.eta * g / (acc.sqrt() + cfg.epsilon_ada);
            }
            version += 1;
        }
        if version >= last_target_sync + cfg.target_period {
            sync_net(&mut target_net, &master);
            last_target_sync = version;
        }

        digests.push(param_digest(&master));
    }

    SerialTrace {
        digests,
        final_params: master,
        versions: version,
    }
}
