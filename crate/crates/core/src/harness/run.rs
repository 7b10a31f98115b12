//! End-to-end experiment runs: launch components over the chosen transport,
//! evaluate snapshots periodically, persist metrics, checkpoints and the
//! config, and stop on version budget or score threshold.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;

use crate::envs::env_by_name;
use crate::learner::StepOutcome;
use crate::nn::{save_checkpoint, ParamVector, QNetwork};
use crate::replay::{GlobalReplay, GlobalReplayClient};
use crate::seed::{derive_seed, stream_rng};
use crate::server::{
    spawn_tcp_param_server, InlineParamClient, ParamClient, ParamServer, RemoteParamClient,
};
use crate::transport::{connect_with_backoff, BackoffPolicy, Conn, InProcConn};

use super::bundle::{Bundle, DeterministicRunner};
use super::config::{RunConfig, TransportKind};
use super::eval::{eval_null_op, EvalProtocol, GreedyNetPolicy, ProtocolKind};
use super::metrics::{MetricsRow, MetricsWriter};
use super::HarnessError;

/// Summary of a finished (or stopped) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub final_version: u64,
    /// Greedy evaluation of the untrained initial parameters.
    pub initial_score: f64,
    pub best_score: f64,
    pub final_score: f64,
    pub wall_clock_s: f64,
    /// Set when `stop_at_eval_score` was configured and reached.
    pub time_to_threshold_s: Option<f64>,
    pub rejected_batches: u64,
    pub stale_discards: u64,
}

/// Per-bundle counters shared with the supervisor thread.
#[derive(Default)]
struct Telemetry {
    loss_bits: AtomicU64,
    rejected: AtomicU64,
}

impl Telemetry {
    fn record(&self, outcome: &StepOutcome) {
        match outcome {
            StepOutcome::Pushed { loss, .. } => {
                self.loss_bits.store(loss.to_bits(), Ordering::Relaxed);
            }
            StepOutcome::RejectedOutlier { loss } => {
                self.loss_bits.store(loss.to_bits(), Ordering::Relaxed);
                self.rejected.fetch_add(1, Ordering::Relaxed);
            }
            StepOutcome::ReplayNotReady => {}
        }
    }

    fn loss(&self) -> f64 {
        f64::from_bits(self.loss_bits.load(Ordering::Relaxed))
    }
}

fn eval_protocol_from(cfg: &RunConfig) -> EvalProtocol {
    EvalProtocol {
        kind: ProtocolKind::NullOp,
        episodes: cfg.eval_episodes,
        start_points: 100,
        null_op_cap: cfg.eval_cap,
        human_starts_total_cap: cfg.eval_cap * 3,
        max_initial_null_ops: cfg.max_initial_null_ops,
    }
}

/// Greedy null-op evaluation of a parameter snapshot on a fresh env.
fn evaluate_snapshot(
    cfg: &RunConfig,
    params: &ParamVector,
    eval_index: u64,
) -> Result<f64, HarnessError> {
    let mut env = env_by_name(&cfg.env)
        .ok_or_else(|| HarnessError::Config(format!("unknown env '{}'", cfg.env)))?;
    let layers = QNetwork::mlp_spec(
        env.observation_dim() * cfg.stack_k,
        &cfg.hidden,
        env.action_count(),
    );
    let net = QNetwork::from_params(layers, params.clone())?;
    let mut policy = GreedyNetPolicy::new(net, cfg.stack_k, env.observation_dim());
    let proto = eval_protocol_from(cfg);
    let mut rng: StdRng = stream_rng(cfg.seed, &format!("eval.{eval_index}"));
    let seed_base = derive_seed(cfg.seed, &format!("eval-env.{eval_index}"));
    Ok(eval_null_op(
        &mut policy,
        env.as_mut(),
        &proto,
        seed_base,
        &mut rng,
    )?)
}

struct RunState {
    metrics: MetricsWriter,
    initial_score: Option<f64>,
    best_score: f64,
    best_params: Option<ParamVector>,
    last_score: f64,
    eval_count: u64,
    next_eval_version: u64,
    last_eval_version: Option<u64>,
    time_to_threshold_s: Option<f64>,
}

impl RunState {
    fn new(out_dir: &Path, eval_every: u64) -> Result<Self, HarnessError> {
        Ok(RunState {
            metrics: MetricsWriter::create(&out_dir.join("metrics.csv"))?,
            initial_score: None,
            best_score: f64::NEG_INFINITY,
            best_params: None,
            last_score: f64::NEG_INFINITY,
            eval_count: 0,
            next_eval_version: eval_every,
            last_eval_version: None,
            time_to_threshold_s: None,
        })
    }

    /// Evaluate a snapshot, log a metrics row, track the best checkpoint.
    /// Returns true when the configured stop threshold has been reached.
    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &mut self,
        cfg: &RunConfig,
        params: &ParamVector,
        version: u64,
        wall_clock_s: f64,
        loss: f64,
        rejected: u64,
        stale: u64,
    ) -> Result<bool, HarnessError> {
        let score = evaluate_snapshot(cfg, params, self.eval_count)?;
        self.eval_count += 1;
        self.last_eval_version = Some(version);
        if self.initial_score.is_none() {
            self.initial_score = Some(score);
        }
        self.last_score = score;
        if score > self.best_score {
            self.best_score = score;
            self.best_params = Some(params.clone());
        }
        self.metrics.append(&MetricsRow {
            wall_clock_s,
            global_version: version,
            mean_eval_score: score,
            loss,
            rejected_batches: rejected,
            stale_discards: stale,
        })?;
        let reached = cfg
            .stop_at_eval_score
            .map(|threshold| score >= threshold)
            .unwrap_or(false);
        if reached && self.time_to_threshold_s.is_none() {
            self.time_to_threshold_s = Some(wall_clock_s);
        }
        Ok(reached)
    }
}

pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    std::fs::write(out_dir.join("config.txt"), cfg.to_text())?;

    let result = if cfg.deterministic {
        run_deterministic(cfg, out_dir)
    } else {
        run_threaded(cfg, out_dir)
    };
    if let Err(e) = &result {
        // labeled failure record; whatever metrics exist stay on disk
        let _ = std::fs::write(out_dir.join("failure.txt"), format!("{e}\n"));
    }
    result
}

/// Deterministic single-threaded run. The metrics clock is virtual
/// (milliseconds per global version), so identical seeds write identical
/// metrics files.
fn run_deterministic(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    let started = Instant::now();
    let mut runner = DeterministicRunner::new(cfg)?;
    let mut state = RunState::new(out_dir, cfg.eval_every)?;
    let virtual_clock = |version: u64| version as f64 * 1e-3;

    let (v0, p0) = runner.fetch_params()?;
    let mut stopped = state.evaluate(cfg, &p0, v0, virtual_clock(v0), 0.0, 0, 0)?;

    // Steps without accepted gradients (warm-up, rejections) do not advance
    // the version, so bound the loop by steps as well.
    let max_steps = (cfg.min_fill as u64 + cfg.max_versions)
        .saturating_mul(10)
        .max(10_000);
    let mut steps = 0u64;
    let mut rejected = 0u64;
    while !stopped && runner.version() < cfg.max_versions && steps < max_steps {
        let outcomes = runner.step()?;
        rejected += outcomes
            .iter()
            .filter(|o| matches!(o, StepOutcome::RejectedOutlier { .. }))
            .count() as u64;
        steps += 1;
        let version = runner.version();
        if version >= state.next_eval_version {
            state.next_eval_version = version + cfg.eval_every;
            let (v, params) = runner.fetch_params()?;
            let loss = runner
                .bundles()
                .first()
                .map(|b| b.learner().last_loss())
                .unwrap_or(0.0);
            let stale = runner.server().stats().discarded_stale;
            stopped = state.evaluate(cfg, &params, v, virtual_clock(v), loss, rejected, stale)?;
        }
    }

    let (final_version, final_params) = runner.fetch_params()?;
    let stats = runner.server().stats();
    finalize(
        cfg,
        out_dir,
        state,
        final_version,
        &final_params,
        virtual_clock(final_version),
        started.elapsed().as_secs_f64(),
        rejected,
        stats.discarded_stale,
    )
}

/// Threaded run over the in-process or socket transport: one thread per
/// bundle, a supervisor evaluating snapshots on the real wall clock.
fn run_threaded(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    if !cfg.bundled {
        return run_threaded_global(cfg, out_dir);
    }
    let started = Instant::now();
    let env = env_by_name(&cfg.env)
        .ok_or_else(|| HarnessError::Config(format!("unknown env '{}'", cfg.env)))?;
    let layers = QNetwork::mlp_spec(
        env.observation_dim() * cfg.stack_k,
        &cfg.hidden,
        env.action_count(),
    );
    drop(env);
    let initial = QNetwork::seeded(layers, derive_seed(cfg.seed, "init"))?;
    let n_shards = cfg.effective_n_param(initial.params().len());
    let server = Arc::new(ParamServer::new(
        initial.params(),
        n_shards,
        cfg.eta,
        cfg.epsilon_ada,
        cfg.max_delay,
    )?);

    let stop = Arc::new(AtomicBool::new(false));
    let failure: Arc<Mutex<Option<String>>> = Arc::new(Mutex::new(None));

    // Socket mode: real TCP service on localhost; clients dial in.
    let (listener_handle, addr) = match cfg.transport {
        TransportKind::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let handle = spawn_tcp_param_server(Arc::clone(&server), listener, Arc::clone(&stop));
            (Some(handle), Some(addr))
        }
        TransportKind::InProcess => (None, None),
    };

    let make_client = |server: &Arc<ParamServer>| -> Result<Box<dyn ParamClient + Send>, HarnessError> {
        match cfg.transport {
            TransportKind::InProcess => Ok(Box::new(InlineParamClient::new(Arc::clone(server)))),
            TransportKind::Socket => {
                let conn = connect_with_backoff(addr.expect("socket addr"), &BackoffPolicy::default())?;
                Ok(Box::new(RemoteParamClient::new(
                    conn,
                    server.layout().clone(),
                    n_shards,
                )))
            }
        }
    };

    let mut workers = Vec::new();
    let mut telemetry = Vec::new();
    for id in 0..cfg.n_act {
        let mut bundle = Bundle::build(cfg, id)?;
        let mut client = make_client(&server)?;
        let tele = Arc::new(Telemetry::default());
        telemetry.push(Arc::clone(&tele));
        let stop = Arc::clone(&stop);
        let failure = Arc::clone(&failure);
        let delay = Duration::from_micros(cfg.actor_delay_us);
        workers.push(std::thread::spawn(move || {
            if let Err(e) = bundle.initialize(client.as_mut()) {
                *failure.lock().expect("failure lock") = Some(format!("bundle {id}: {e}"));
                stop.store(true, Ordering::SeqCst);
                return;
            }
            while !stop.load(Ordering::SeqCst) {
                match bundle.step(client.as_mut()) {
                    Ok(outcome) => tele.record(&outcome),
                    Err(e) => {
                        *failure.lock().expect("failure lock") =
                            Some(format!("bundle {id}: {e}"));
                        stop.store(true, Ordering::SeqCst);
                        return;
                    }
                }
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
        }));
    }

    // Supervisor: evaluation runs on frozen snapshots fetched through the
    // server's own lock discipline; training state is never touched.
    let mut state = RunState::new(out_dir, cfg.eval_every)?;
    let mut stopped = false;
    let fetch_all = |server: &Arc<ParamServer>| -> Result<(u64, ParamVector), HarnessError> {
        let mut client = InlineParamClient::new(Arc::clone(server));
        Ok(client.fetch_full()?)
    };
    let (v0, p0) = fetch_all(&server)?;
    let elapsed = started.elapsed().as_secs_f64();
    stopped = state.evaluate(cfg, &p0, v0, elapsed, 0.0, 0, 0)? || stopped;

    while !stopped {
        if failure.lock().expect("failure lock").is_some() {
            break;
        }
        let version = server.current_version();
        if version >= cfg.max_versions {
            break;
        }
        if version >= state.next_eval_version {
            state.next_eval_version = version + cfg.eval_every;
            let (v, params) = fetch_all(&server)?;
            let loss = telemetry.first().map(|t| t.loss()).unwrap_or(0.0);
            let rejected: u64 = telemetry.iter().map(|t| t.rejected.load(Ordering::Relaxed)).sum();
            let stale = server.stats().discarded_stale;
            stopped = state.evaluate(
                cfg,
                &params,
                v,
                started.elapsed().as_secs_f64(),
                loss,
                rejected,
                stale,
            )?;
        } else {
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    stop.store(true, Ordering::SeqCst);
    for w in workers {
        w.join().map_err(|_| {
            HarnessError::ComponentCrash("bundle thread panicked".into())
        })?;
    }
    if let Some(handle) = listener_handle {
        handle.join().ok();
    }
    if let Some(msg) = failure.lock().expect("failure lock").take() {
        return Err(HarnessError::ComponentCrash(msg));
    }

    let (final_version, final_params) = fetch_all(&server)?;
    let rejected: u64 = telemetry.iter().map(|t| t.rejected.load(Ordering::Relaxed)).sum();
    let stats = server.stats();
    finalize(
        cfg,
        out_dir,
        state,
        final_version,
        &final_params,
        started.elapsed().as_secs_f64(),
        started.elapsed().as_secs_f64(),
        rejected,
        stats.discarded_stale,
    )
}

/// Non-bundled mode: actors write to a sharded global replay service,
/// learners sample from it; actor and learner counts are independent.
fn run_threaded_global(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    use crate::actor::{Actor, ActorConfig};
    use crate::learner::{Learner, LearnerConfig, TargetSyncPolicy};
    use crate::rl::Discount;

    let started = Instant::now();
    let env = env_by_name(&cfg.env)
        .ok_or_else(|| HarnessError::Config(format!("unknown env '{}'", cfg.env)))?;
    let obs_dim = env.observation_dim();
    let n_actions = env.action_count();
    drop(env);
    let layers = QNetwork::mlp_spec(obs_dim * cfg.stack_k, &cfg.hidden, n_actions);
    let initial = QNetwork::seeded(layers.clone(), derive_seed(cfg.seed, "init"))?;
    let n_shards = cfg.effective_n_param(initial.params().len());
    let server = Arc::new(ParamServer::new(
        initial.params(),
        n_shards,
        cfg.eta,
        cfg.epsilon_ada,
        cfg.max_delay,
    )?);
    // Global replay: one shard per actor, capacity split evenly.
    let store = Arc::new(Mutex::new(GlobalReplay::new(
        cfg.n_act.max(1),
        (cfg.replay_capacity / cfg.n_act as usize).max(1),
        derive_seed(cfg.seed, "replay.global"),
    )));

    let stop = Arc::new(AtomicBool::new(false));
    let failure: Arc<Mutex<Option<String>>> = Arc::new(Mutex::new(None));
    let mut workers = Vec::new();

    let fail_and_stop = |failure: &Arc<Mutex<Option<String>>>,
                         stop: &Arc<AtomicBool>,
                         msg: String| {
        *failure.lock().expect("failure lock") = Some(msg);
        stop.store(true, Ordering::SeqCst);
    };

    for id in 0..cfg.n_act {
        let env = env_by_name(&cfg.env)
            .ok_or_else(|| HarnessError::Config(format!("unknown env '{}'", cfg.env)))?;
        let actor_cfg = ActorConfig {
            actor_id: id,
            sync_period_steps: cfg.sync_period,
            episode_cap: cfg.episode_cap,
            env_seed_base: derive_seed(cfg.seed, &format!("env.{id}")),
            epsilon: cfg.epsilon_schedule()?,
            stack_k: cfg.stack_k,
        };
        let mut actor = Actor::new(
            actor_cfg,
            env,
            QNetwork::zeros(layers.clone())?,
            stream_rng(cfg.seed, &format!("actor.{id}")),
        )?;
        let mut sink = spawn_store_conn(&store, &mut workers);
        let mut client = InlineParamClient::new(Arc::clone(&server));
        let stop = Arc::clone(&stop);
        let failure = Arc::clone(&failure);
        let delay = Duration::from_micros(cfg.actor_delay_us);
        workers.push(std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                if let Err(e) = actor.step(&mut sink, &mut client) {
                    fail_and_stop(&failure, &stop, format!("actor {id}: {e}"));
                    return;
                }
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
        }));
    }

    for id in 0..cfg.n_learn {
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
        let mut learner = Learner::new(QNetwork::zeros(layers.clone())?, learner_cfg)?;
        let mut source = spawn_store_conn(&store, &mut workers);
        let mut client = InlineParamClient::new(Arc::clone(&server));
        let stop = Arc::clone(&stop);
        let failure = Arc::clone(&failure);
        workers.push(std::thread::spawn(move || {
            if let Err(e) = learner.sync_current(&mut client) {
                fail_and_stop(&failure, &stop, format!("learner {id}: {e}"));
                return;
            }
            while !stop.load(Ordering::SeqCst) {
                let step = learner
                    .sync_current(&mut client)
                    .and_then(|_| learner.step(&mut source, &mut client))
                    .and_then(|o| learner.maybe_sync_target(&mut client).map(|_| o));
                match step {
                    Ok(StepOutcome::ReplayNotReady) => {
                        std::thread::sleep(Duration::from_micros(200));
                    }
                    Ok(_) => {}
                    Err(e) => {
                        fail_and_stop(&failure, &stop, format!("learner {id}: {e}"));
                        return;
                    }
                }
            }
        }));
    }

    let mut state = RunState::new(out_dir, cfg.eval_every)?;
    let fetch_all = |server: &Arc<ParamServer>| -> Result<(u64, ParamVector), HarnessError> {
        let mut client = InlineParamClient::new(Arc::clone(server));
        Ok(client.fetch_full()?)
    };
    let (v0, p0) = fetch_all(&server)?;
    let mut stopped = state.evaluate(cfg, &p0, v0, started.elapsed().as_secs_f64(), 0.0, 0, 0)?;
    while !stopped {
        if failure.lock().expect("failure lock").is_some() {
            break;
        }
        let version = server.current_version();
        if version >= cfg.max_versions {
            break;
        }
        if version >= state.next_eval_version {
            state.next_eval_version = version + cfg.eval_every;
            let (v, params) = fetch_all(&server)?;
            let stale = server.stats().discarded_stale;
            stopped = state.evaluate(
                cfg,
                &params,
                v,
                started.elapsed().as_secs_f64(),
                0.0,
                0,
                stale,
            )?;
        } else {
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    stop.store(true, Ordering::SeqCst);
    for w in workers {
        w.join()
            .map_err(|_| HarnessError::ComponentCrash("worker thread panicked".into()))?;
    }
    if let Some(msg) = failure.lock().expect("failure lock").take() {
        return Err(HarnessError::ComponentCrash(msg));
    }
    let (final_version, final_params) = fetch_all(&server)?;
    let stats = server.stats();
    finalize(
        cfg,
        out_dir,
        state,
        final_version,
        &final_params,
        started.elapsed().as_secs_f64(),
        started.elapsed().as_secs_f64(),
        0,
        stats.discarded_stale,
    )
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    cfg: &RunConfig,
    out_dir: &Path,
    mut state: RunState,
    final_version: u64,
    final_params: &ParamVector,
    metrics_clock: f64,
    wall_clock_s: f64,
    rejected: u64,
    stale: u64,
) -> Result<RunOutcome, HarnessError> {
    // Closing evaluation on the final parameters, unless the last periodic
    // evaluation already covered this exact version (a zero-step run keeps
    // its single initial evaluation).
    if state.last_eval_version != Some(final_version) {
        state.evaluate(cfg, final_params, final_version, metrics_clock, 0.0, rejected, stale)?;
    }
    save_checkpoint(&out_dir.join("checkpoints/final.grla"), final_params)?;
    if let Some(best) = &state.best_params {
        save_checkpoint(&out_dir.join("checkpoints/best.grla"), best)?;
    }
    std::fs::write(
        out_dir.join("eval_report.txt"),
        format!(
            "protocol null_op\nepisodes {}\nbest_score {}\nfinal_score {}\nfinal_version {}\n",
            cfg.eval_episodes, state.best_score, state.last_score, final_version
        ),
    )?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        final_version,
        initial_score: state.initial_score.unwrap_or(f64::NEG_INFINITY),
        best_score: state.best_score,
        final_score: state.last_score,
        wall_clock_s,
        time_to_threshold_s: state.time_to_threshold_s,
        rejected_batches: rejected,
        stale_discards: stale,
    })
}

/// In-process connection to the global replay store: a service thread per
/// client connection, all sharing the store mutex.
fn spawn_store_conn(
    store: &Arc<Mutex<GlobalReplay>>,
    workers: &mut Vec<std::thread::JoinHandle<()>>,
) -> GlobalReplayClient<InProcConn> {
    let (client_end, mut service_end) = crate::transport::inproc_pair();
    let store = Arc::clone(store);
    workers.push(std::thread::spawn(move || loop {
        match service_end.recv() {
            Ok(req) => {
                let resp = store.lock().expect("store lock").handle(&req);
                if service_end.send(&resp).is_err() {
                    return;
                }
            }
            Err(_) => return,
        }
    }));
    GlobalReplayClient::new(client_end)
}

/// Serve one in-process connection against a param server (test support).
pub fn serve_inproc_param(server: Arc<ParamServer>, mut conn: InProcConn) {
    loop {
        match conn.recv() {
            Ok(req) => {
                let resp = server.handle(&req);
                if conn.send(&resp).is_err() {
                    return;
                }
            }
            Err(_) => return,
        }
    }
}
