//! Versioned key-value run configuration.
//!
//! The on-disk format is plain text, one `key value` pair per line, `#`
//! comments, and a mandatory `config_version 1` line. Unknown keys are
//! errors so typos cannot silently fall back to defaults. The full schema
//! with defaults lives in `docs/config.md`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::rl::EpsilonSchedule;

use super::HarnessError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Socket,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: String,
    pub n_act: u32,
    pub n_learn: u32,
    pub n_param: u32,
    pub bundled: bool,
    pub transport: TransportKind,
    /// Single-threaded lockstep run with a virtual metrics clock; requires
    /// one bundle over the in-process transport.
    pub deterministic: bool,
    pub seed: u64,
    pub replay_capacity: usize,
    pub min_fill: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_horizon: u64,
    pub target_period: u64,
    /// None disables the staleness filter ("inf" in the file format).
    pub max_delay: Option<u64>,
    pub rejection: bool,
    pub k_sigma: f64,
    pub loss_decay: f64,
    pub warmup_batches: u64,
    pub batch: usize,
    pub eta: f64,
    pub epsilon_ada: f64,
    pub hidden: Vec<usize>,
    pub stack_k: usize,
    pub episode_cap: usize,
    pub sync_period: u64,
    /// Stop once the server has applied this many updates.
    pub max_versions: u64,
    /// Evaluate (and log a metrics row) every this many global versions.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub eval_cap: usize,
    pub max_initial_null_ops: usize,
    /// Optional early stop once the greedy evaluation reaches this score.
    pub stop_at_eval_score: Option<f64>,
    /// Per-step actor pacing in microseconds; models environment latency
    /// and keeps multi-bundle runs experience-bound rather than CPU-bound.
    pub actor_delay_us: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "chain".into(),
            n_act: 1,
            n_learn: 1,
            n_param: 31,
            bundled: true,
            transport: TransportKind::InProcess,
            deterministic: true,
            seed: 1,
            replay_capacity: 10_000,
            min_fill: 1_000,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_horizon: 10_000,
            target_period: 500,
            max_delay: Some(50),
            rejection: true,
            k_sigma: 3.0,
            loss_decay: 0.999,
            warmup_batches: 100,
            batch: 32,
            eta: 0.05,
            epsilon_ada: 1e-8,
            hidden: vec![64, 64],
            stack_k: 1,
            episode_cap: 200,
            sync_period: 1,
            max_versions: 20_000,
            eval_every: 10_000,
            eval_episodes: 30,
            eval_cap: 1_000,
            max_initial_null_ops: 30,
            stop_at_eval_score: None,
            actor_delay_us: 0,
        }
    }
}

impl RunConfig {
    pub fn epsilon_schedule(&self) -> Result<EpsilonSchedule, HarnessError> {
        EpsilonSchedule::new(self.epsilon_start, self.epsilon_end, self.epsilon_horizon)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.bundled && self.n_act != self.n_learn {
            return fail(format!(
                "bundled mode requires n_act == n_learn, got {} and {}",
                self.n_act, self.n_learn
            ));
        }
        if self.n_act == 0 || self.n_learn == 0 || self.n_param == 0 {
            return fail("n_act, n_learn and n_param must all be >= 1".into());
        }
        if self.deterministic
            && (self.n_act != 1 || !self.bundled || self.transport != TransportKind::InProcess)
        {
            return fail(
                "deterministic mode requires one bundle over the in-process transport".into(),
            );
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0,1]", self.gamma));
        }
        if self.replay_capacity == 0 || self.batch == 0 || self.episode_cap == 0 {
            return fail("replay_capacity, batch and episode_cap must be >= 1".into());
        }
        if self.sync_period == 0 || self.target_period == 0 {
            return fail("sync_period and target_period must be >= 1".into());
        }
        if self.stack_k == 0 {
            return fail("stack_k must be >= 1".into());
        }
        if self.eta.is_nan() || self.eta <= 0.0 || self.epsilon_ada.is_nan() || self.epsilon_ada <= 0.0 {
            return fail("eta and epsilon_ada must be positive".into());
        }
        if self.hidden.is_empty() {
            return fail("need at least one hidden layer".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be >= 1".into());
        }
        self.epsilon_schedule().map(|_| ())
    }

    /// Shard count actually used: the configured value clamped down to the
    /// parameter count when the network is smaller than the default.
    pub fn effective_n_param(&self, total_params: usize) -> u32 {
        (self.n_param as usize).min(total_params).max(1) as u32
    }

    pub fn parse(text: &str) -> Result<RunConfig, HarnessError> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.splitn(2, char::is_whitespace);
            let key = it.next().unwrap_or("");
            let value = it.next().map(str::trim).unwrap_or("");
            if value.is_empty() {
                return Err(HarnessError::Config(format!(
                    "line {}: expected 'key value', got '{raw}'",
                    lineno + 1
                )));
            }
            if pairs.insert(key.to_string(), value.to_string()).is_some() {
                return Err(HarnessError::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
        }

        let version: u32 = take_parsed(&mut pairs, "config_version")?
            .ok_or_else(|| HarnessError::Config("missing config_version".into()))?;
        if version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported config_version {version}"
            )));
        }

        let mut cfg = RunConfig::default();
        if let Some(v) = take_string(&mut pairs, "env") {
            cfg.env = v;
        }
        set_parsed(&mut pairs, "n_act", &mut cfg.n_act)?;
        set_parsed(&mut pairs, "n_learn", &mut cfg.n_learn)?;
        set_parsed(&mut pairs, "n_param", &mut cfg.n_param)?;
        set_bool(&mut pairs, "bundled", &mut cfg.bundled)?;
        if let Some(v) = take_string(&mut pairs, "transport") {
            cfg.transport = match v.as_str() {
                "inproc" => TransportKind::InProcess,
                "socket" => TransportKind::Socket,
                other => {
                    return Err(HarnessError::Config(format!(
                        "transport must be inproc or socket, got '{other}'"
                    )))
                }
            };
        }
        set_bool(&mut pairs, "deterministic", &mut cfg.deterministic)?;
        set_parsed(&mut pairs, "seed", &mut cfg.seed)?;
        set_parsed(&mut pairs, "replay_capacity", &mut cfg.replay_capacity)?;
        set_parsed(&mut pairs, "min_fill", &mut cfg.min_fill)?;
        set_parsed(&mut pairs, "gamma", &mut cfg.gamma)?;
        set_parsed(&mut pairs, "epsilon_start", &mut cfg.epsilon_start)?;
        set_parsed(&mut pairs, "epsilon_end", &mut cfg.epsilon_end)?;
        set_parsed(&mut pairs, "epsilon_horizon", &mut cfg.epsilon_horizon)?;
        set_parsed(&mut pairs, "target_period", &mut cfg.target_period)?;
        if let Some(v) = take_string(&mut pairs, "max_delay") {
            cfg.max_delay = if v == "inf" {
                None
            } else {
                Some(v.parse().map_err(|_| {
                    HarnessError::Config(format!("max_delay must be an integer or 'inf', got '{v}'"))
                })?)
            };
        }
        set_bool(&mut pairs, "rejection", &mut cfg.rejection)?;
        set_parsed(&mut pairs, "k_sigma", &mut cfg.k_sigma)?;
        set_parsed(&mut pairs, "loss_decay", &mut cfg.loss_decay)?;
        set_parsed(&mut pairs, "warmup_batches", &mut cfg.warmup_batches)?;
        set_parsed(&mut pairs, "batch", &mut cfg.batch)?;
        set_parsed(&mut pairs, "eta", &mut cfg.eta)?;
        set_parsed(&mut pairs, "epsilon_ada", &mut cfg.epsilon_ada)?;
        if let Some(v) = take_string(&mut pairs, "hidden") {
            cfg.hidden = v
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    HarnessError::Config(format!("hidden must be comma-separated sizes, got '{v}'"))
                })?;
        }
        set_parsed(&mut pairs, "stack_k", &mut cfg.stack_k)?;
        set_parsed(&mut pairs, "episode_cap", &mut cfg.episode_cap)?;
        set_parsed(&mut pairs, "sync_period", &mut cfg.sync_period)?;
        set_parsed(&mut pairs, "max_versions", &mut cfg.max_versions)?;
        set_parsed(&mut pairs, "eval_every", &mut cfg.eval_every)?;
        set_parsed(&mut pairs, "eval_episodes", &mut cfg.eval_episodes)?;
        set_parsed(&mut pairs, "eval_cap", &mut cfg.eval_cap)?;
        set_parsed(&mut pairs, "max_initial_null_ops", &mut cfg.max_initial_null_ops)?;
        if let Some(v) = take_string(&mut pairs, "stop_at_eval_score") {
            cfg.stop_at_eval_score = if v == "none" {
                None
            } else {
                Some(v.parse().map_err(|_| {
                    HarnessError::Config(format!(
                        "stop_at_eval_score must be a number or 'none', got '{v}'"
                    ))
                })?)
            };
        }
        set_parsed(&mut pairs, "actor_delay_us", &mut cfg.actor_delay_us)?;

        if let Some(key) = pairs.keys().next() {
            return Err(HarnessError::Config(format!("unknown key '{key}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Serialize in the same key-value format `parse` accepts.
    pub fn to_text(&self) -> String {
        let transport = match self.transport {
            TransportKind::InProcess => "inproc",
            TransportKind::Socket => "socket",
        };
        let max_delay = match self.max_delay {
            None => "inf".to_string(),
            Some(d) => d.to_string(),
        };
        let stop = match self.stop_at_eval_score {
            None => "none".to_string(),
            Some(s) => format!("{s}"),
        };
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "config_version {CONFIG_VERSION}\n\
             env {}\nn_act {}\nn_learn {}\nn_param {}\nbundled {}\ntransport {transport}\n\
             deterministic {}\nseed {}\nreplay_capacity {}\nmin_fill {}\ngamma {}\n\
             epsilon_start {}\nepsilon_end {}\nepsilon_horizon {}\ntarget_period {}\n\
             max_delay {max_delay}\nrejection {}\nk_sigma {}\nloss_decay {}\nwarmup_batches {}\n\
             batch {}\neta {}\nepsilon_ada {}\nhidden {}\nstack_k {}\nepisode_cap {}\n\
             sync_period {}\nmax_versions {}\neval_every {}\neval_episodes {}\neval_cap {}\n\
             max_initial_null_ops {}\nstop_at_eval_score {stop}\nactor_delay_us {}\n",
            self.env,
            self.n_act,
            self.n_learn,
            self.n_param,
            self.bundled,
            self.deterministic,
            self.seed,
            self.replay_capacity,
            self.min_fill,
            self.gamma,
            self.epsilon_start,
            self.epsilon_end,
            self.epsilon_horizon,
            self.target_period,
            self.rejection,
            self.k_sigma,
            self.loss_decay,
            self.warmup_batches,
            self.batch,
            self.eta,
            self.epsilon_ada,
            hidden.join(","),
            self.stack_k,
            self.episode_cap,
            self.sync_period,
            self.max_versions,
            self.eval_every,
            self.eval_episodes,
            self.eval_cap,
            self.max_initial_null_ops,
            self.actor_delay_us,
        )
    }
}

fn take_string(pairs: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
    pairs.remove(key)
}

fn take_parsed<T: std::str::FromStr>(
    pairs: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, HarnessError> {
    match pairs.remove(key) {
        None => Ok(None),
        Some(v) => v.parse::<T>().map(Some).map_err(|_| {
            HarnessError::Config(format!("key '{key}': cannot parse '{v}'"))
        }),
    }
}

fn set_parsed<T: std::str::FromStr>(
    pairs: &mut BTreeMap<String, String>,
    key: &str,
    slot: &mut T,
) -> Result<(), HarnessError> {
    if let Some(v) = take_parsed(pairs, key)? {
        *slot = v;
    }
    Ok(())
}

fn set_bool(
    pairs: &mut BTreeMap<String, String>,
    key: &str,
    slot: &mut bool,
) -> Result<(), HarnessError> {
    if let Some(v) = pairs.remove(key) {
        *slot = match v.as_str() {
            "true" => true,
            "false" => false,
            other => {
                return Err(HarnessError::Config(format!(
                    "key '{key}': expected true or false, got '{other}'"
                )))
            }
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig {
            env: "gridworld".into(),
            n_act: 4,
            n_learn: 4,
            max_delay: None,
            transport: TransportKind::Socket,
            deterministic: false,
            stop_at_eval_score: Some(0.8),
            hidden: vec![32, 16],
            ..RunConfig::default()
        };
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.env, "gridworld");
        assert_eq!(back.n_act, 4);
        assert_eq!(back.max_delay, None);
        assert_eq!(back.transport, TransportKind::Socket);
        assert_eq!(back.stop_at_eval_score, Some(0.8));
        assert_eq!(back.hidden, vec![32, 16]);
    }

    #[test]
    fn bundled_requires_matching_counts() {
        let text = "config_version 1\nn_act 2\nn_learn 3\ndeterministic false\n";
        assert!(matches!(
            RunConfig::parse(text),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn version_is_mandatory_and_checked() {
        assert!(RunConfig::parse("n_act 1\n").is_err());
        assert!(RunConfig::parse("config_version 9\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "config_version 1\nnact 2\n";
        match RunConfig::parse(text) {
            Err(HarnessError::Config(msg)) => assert!(msg.contains("nact")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# run setup\nconfig_version 1\n\nseed 42 # master seed\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn n_param_clamps_to_parameter_count() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.effective_n_param(10), 10);
        assert_eq!(cfg.effective_n_param(5000), 31);
    }

    #[test]
    fn deterministic_mode_constraints() {
        let text = "config_version 1\ndeterministic true\ntransport socket\n";
        assert!(RunConfig::parse(text).is_err());
        let text = "config_version 1\ndeterministic true\nn_act 2\nn_learn 2\n";
        assert!(RunConfig::parse(text).is_err());
    }
}
