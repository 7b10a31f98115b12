//! Command-line front end.
//!
//! Subcommands:
//! - `train --config <path> --out <dir>`: run an experiment end to end.
//! - `eval --checkpoint <path> --protocol null_op|human_starts`: score a
//!   saved network under an evaluation protocol.
//! - `report --raw <csv>`: normalized score tables from a raw score file.
//! - `oracle --env chain --gamma 0.9`: exact Q* by value iteration.
//! - `record --env chain --out <file>`: record a near-optimal trajectory
//!   for the human-starts protocol.

use std::path::PathBuf;
use std::process::ExitCode;

use rand::SeedableRng;

use distdqn::envs::{
    env_by_name, expected_random_return, greedy_policy_return, load_trajectory, save_trajectory,
    tabular_by_name, value_iteration,
};
use distdqn::harness::{
    eval_human_starts, eval_null_op, read_raw_scores, record_expert_trajectory, report_tables,
    run_experiment, write_report, EvalProtocol, GreedyNetPolicy, ProtocolKind, RunConfig,
};
use distdqn::nn::{layers_from_layout, load_checkpoint, QNetwork};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        print_usage();
        return ExitCode::FAILURE;
    };
    let rest = &args[1..];
    let result = match command.as_str() {
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "report" => cmd_report(rest),
        "oracle" => cmd_oracle(rest),
        "record" => cmd_record(rest),
        "--help" | "-h" | "help" => {
            print_usage();
            return ExitCode::SUCCESS;
        }
        other => Err(format!("unknown command '{other}'")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn print_usage() {
    eprintln!(
        r#"distdqn: distributed DQN at desk scale

USAGE:
    distdqn train  --config <path> --out <dir> [--runs N]
    distdqn eval   --checkpoint <path> --protocol null_op|human_starts
                   [--env <name>] [--trajectory <path>] [--episodes N]
                   [--starts N] [--cap N] [--max-null-ops N] [--seed N]
    distdqn report --raw <csv> [--out <csv>] [--no-fallback]
    distdqn oracle --env <name> [--gamma G] [--tol T]
    distdqn record --env <name> --out <path> [--seed N] [--cap N]
                   [--gamma G] [--epsilon E]

Environments: chain, gridworld. Config schema: docs/config.md."#
    );
}

/// Minimal flag parser: every option takes exactly one value.
struct Flags {
    pairs: Vec<(String, String)>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self, String> {
        let mut pairs = Vec::new();
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            if !flag.starts_with("--") {
                return Err(format!("expected a --flag, got '{flag}'"));
            }
            if flag == "--no-fallback" {
                pairs.push((flag.clone(), "true".into()));
                continue;
            }
            let value = it
                .next()
                .ok_or_else(|| format!("missing value for {flag}"))?;
            pairs.push((flag.clone(), value.clone()));
        }
        Ok(Flags { pairs })
    }

    fn take(&mut self, flag: &str) -> Option<String> {
        let idx = self.pairs.iter().position(|(f, _)| f == flag)?;
        Some(self.pairs.remove(idx).1)
    }

    fn require(&mut self, flag: &str) -> Result<String, String> {
        self.take(flag).ok_or_else(|| format!("missing {flag}"))
    }

    fn parsed<T: std::str::FromStr>(&mut self, flag: &str, default: T) -> Result<T, String> {
        match self.take(flag) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("bad value for {flag}: '{v}'")),
        }
    }

    fn finish(self) -> Result<(), String> {
        if let Some((flag, _)) = self.pairs.first() {
            return Err(format!("unknown flag '{flag}'"));
        }
        Ok(())
    }
}

fn cmd_train(args: &[String]) -> Result<(), String> {
    let mut flags = Flags::parse(args)?;
    let config = PathBuf::from(flags.require("--config")?);
    let out = PathBuf::from(flags.require("--out")?);
    let runs: u64 = flags.parsed("--runs", 1)?;
    flags.finish()?;
    if runs == 0 {
        return Err("--runs must be >= 1".into());
    }

    let base_cfg = RunConfig::load(&config).map_err(|e| e.to_string())?;
    if runs == 1 {
        let outcome = run_experiment(&base_cfg, &out).map_err(|e| e.to_string())?;
        print_outcome(&outcome);
        return Ok(());
    }

    // Repetitions: the same config under seeds seed, seed+1, ..., with the
    // best checkpoints of each run evaluated and averaged.
    let mut best_scores = Vec::new();
    let mut final_scores = Vec::new();
    for i in 0..runs {
        let mut cfg = base_cfg.clone();
        cfg.seed = base_cfg.seed + i;
        let run_dir = out.join(format!("run-{i}"));
        let outcome = run_experiment(&cfg, &run_dir).map_err(|e| e.to_string())?;
        println!(
            "run {i} (seed {}): best {:.4}, final {:.4}, {:.2}s",
            cfg.seed, outcome.best_score, outcome.final_score, outcome.wall_clock_s
        );
        best_scores.push(outcome.best_score);
        final_scores.push(outcome.final_score);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean over {runs} runs: best {:.4}, final {:.4}",
        mean(&best_scores),
        mean(&final_scores)
    );
    Ok(())
}

fn print_outcome(outcome: &distdqn::harness::RunOutcome) {
    println!("run directory: {}", outcome.out_dir.display());
    println!("final version: {}", outcome.final_version);
    println!("best eval score: {:.4}", outcome.best_score);
    println!("final eval score: {:.4}", outcome.final_score);
    println!("wall clock: {:.2}s", outcome.wall_clock_s);
    if let Some(t) = outcome.time_to_threshold_s {
        println!("time to threshold: {t:.2}s");
    }
    println!(
        "rejected batches: {}, stale discards: {}",
        outcome.rejected_batches, outcome.stale_discards
    );
}

fn cmd_eval(args: &[String]) -> Result<(), String> {
    let mut flags = Flags::parse(args)?;
    let checkpoint = PathBuf::from(flags.require("--checkpoint")?);
    let protocol = flags.require("--protocol")?;
    let env_name = flags.take("--env").unwrap_or_else(|| "chain".into());
    let trajectory = flags.take("--trajectory").map(PathBuf::from);
    let episodes: usize = flags.parsed("--episodes", 30)?;
    let starts: usize = flags.parsed("--starts", 100)?;
    let cap: usize = flags.parsed("--cap", 1_000)?;
    let max_null_ops: usize = flags.parsed("--max-null-ops", 30)?;
    let seed: u64 = flags.parsed("--seed", 0)?;
    flags.finish()?;

    let params = load_checkpoint(&checkpoint).map_err(|e| e.to_string())?;
    let layers = layers_from_layout(params.layout()).map_err(|e| e.to_string())?;
    let net = QNetwork::from_params(layers, params).map_err(|e| e.to_string())?;
    let mut env =
        env_by_name(&env_name).ok_or_else(|| format!("unknown env '{env_name}'"))?;
    let obs_dim = env.observation_dim();
    if net.input_dim() % obs_dim != 0 {
        return Err(format!(
            "checkpoint input dim {} does not stack over env dim {obs_dim}",
            net.input_dim()
        ));
    }
    let stack_k = net.input_dim() / obs_dim;
    let mut policy = GreedyNetPolicy::new(net, stack_k, obs_dim);
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);

    let proto = EvalProtocol {
        kind: match protocol.as_str() {
            "null_op" => ProtocolKind::NullOp,
            "human_starts" => ProtocolKind::HumanStarts,
            other => return Err(format!("protocol must be null_op or human_starts, got '{other}'")),
        },
        episodes,
        start_points: starts,
        null_op_cap: cap,
        human_starts_total_cap: cap,
        max_initial_null_ops: max_null_ops,
    };
    let score = match proto.kind {
        ProtocolKind::NullOp => {
            eval_null_op(&mut policy, env.as_mut(), &proto, seed, &mut rng)
                .map_err(|e| e.to_string())?
        }
        ProtocolKind::HumanStarts => {
            let path = trajectory.ok_or("human_starts requires --trajectory")?;
            let traj = load_trajectory(&path).map_err(|e| e.to_string())?;
            eval_human_starts(&mut policy, env.as_mut(), &traj, &proto, &mut rng)
                .map_err(|e| e.to_string())?
        }
    };
    println!("{protocol} mean score over {} runs: {score:.4}", match proto.kind {
        ProtocolKind::NullOp => episodes,
        ProtocolKind::HumanStarts => starts,
    });
    Ok(())
}

fn cmd_report(args: &[String]) -> Result<(), String> {
    let mut flags = Flags::parse(args)?;
    let raw = PathBuf::from(flags.require("--raw")?);
    let out = flags.take("--out").map(PathBuf::from);
    let fallback = flags.take("--no-fallback").is_none();
    flags.finish()?;

    let rows = read_raw_scores(&raw).map_err(|e| e.to_string())?;
    let report = report_tables(&rows, fallback);
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(&path).map_err(|e| e.to_string())?;
            write_report(&mut file, &report).map_err(|e| e.to_string())?;
            println!("wrote {} rows to {}", report.len(), path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_report(&mut stdout, &report).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn cmd_oracle(args: &[String]) -> Result<(), String> {
    let mut flags = Flags::parse(args)?;
    let env_name = flags.require("--env")?;
    let gamma: f64 = flags.parsed("--gamma", 0.9)?;
    let tol: f64 = flags.parsed("--tol", 1e-10)?;
    flags.finish()?;

    let mdp = tabular_by_name(&env_name).ok_or_else(|| format!("unknown env '{env_name}'"))?;
    let table = value_iteration(mdp.as_ref(), gamma, tol).map_err(|e| e.to_string())?;
    println!("env {env_name}, gamma {gamma}, residual tol {tol:e}");
    println!("state | q per action | greedy");
    for s in 0..mdp.n_states() {
        if mdp.is_terminal_state(s) {
            println!("{s:>5} | terminal");
            continue;
        }
        let qs: Vec<String> = (0..mdp.n_actions())
            .map(|a| format!("{:+.6}", table.q(s, a)))
            .collect();
        println!("{s:>5} | {} | {}", qs.join("  "), table.greedy(s));
    }
    println!(
        "greedy return (cap 200): {:.6}",
        greedy_policy_return(mdp.as_ref(), &table, 200)
    );
    println!(
        "random return (cap 200): {:.6}",
        expected_random_return(mdp.as_ref(), 200)
    );
    Ok(())
}

fn cmd_record(args: &[String]) -> Result<(), String> {
    let mut flags = Flags::parse(args)?;
    let env_name = flags.require("--env")?;
    let out = PathBuf::from(flags.require("--out")?);
    let seed: u64 = flags.parsed("--seed", 0)?;
    let cap: usize = flags.parsed("--cap", 1_000)?;
    let gamma: f64 = flags.parsed("--gamma", 0.9)?;
    let epsilon: f64 = flags.parsed("--epsilon", 0.05)?;
    flags.finish()?;

    let mut rng = rand::rngs::StdRng::seed_from_u64(seed.wrapping_add(1));
    let trajectory =
        record_expert_trajectory(&env_name, gamma, seed, cap, epsilon, &mut rng)
            .map_err(|e| e.to_string())?;
    let score: f64 = trajectory.steps.iter().map(|s| s.reward).sum();
    save_trajectory(&out, &trajectory).map_err(|e| e.to_string())?;
    println!(
        "recorded {} steps on {env_name} (score {score:.4}) to {}",
        trajectory.len(),
        out.display()
    );
    Ok(())
}
