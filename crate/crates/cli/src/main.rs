use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rlsa2c_core::trainer::{self, bench, eval, smooth_log};
use rlsa2c_core::TrainConfig;

#[derive(Parser)]
#[command(
    name = "rlsa2c",
    version,
    about = "RLS-based advantage actor-critic trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and stream metrics to CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        total_timesteps: Option<u64>,
        /// Write a checkpoint here when training ends.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint's policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Sample actions instead of taking the greedy one.
        #[arg(long)]
        sample: bool,
    },
    /// Compare throughput of the three algorithms and report per-layer overheads.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
    },
    /// Re-emit a training log as smoothed curves.
    PlotData {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
}

fn overrides(
    algo: Option<String>,
    env: Option<String>,
    seed: Option<u64>,
    total_timesteps: Option<u64>,
    checkpoint: Option<PathBuf>,
    set: Vec<String>,
) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    push("algorithm", algo);
    push("env", env);
    push("seed", seed.map(|s| s.to_string()));
    push("total_timesteps", total_timesteps.map(|t| t.to_string()));
    push("checkpoint", checkpoint.map(|p| p.display().to_string()));
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("expected KEY=VALUE, got `{kv}`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            algo,
            env,
            seed,
            total_timesteps,
            checkpoint,
            resume,
            set,
        } => {
            let overrides = overrides(algo, env, seed, total_timesteps, checkpoint, set)?;
            let config = TrainConfig::load(&config, &overrides)?;
            let summary = trainer::run(config, resume.as_deref())?;
            println!(
                "wrote {} rows to {}",
                summary.rows,
                summary.log_path.display()
            );
            if let Some(last) = summary.last {
                println!(
                    "timesteps {} reward_mean_100 {}",
                    last.timesteps, last.reward_mean_100
                );
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            sample,
        } => {
            let report = eval::eval_checkpoint(&checkpoint, episodes, !sample)?;
            println!(
                "episodes {} mean {:.3} std {:.3}",
                report.returns.len(),
                report.mean,
                report.std
            );
        }
        Command::Bench {
            config,
            warmup,
            iterations,
        } => {
            let config = TrainConfig::load(&config, &[])?;
            let report = bench::bench(&config, warmup, iterations)?;
            print!("{}", report.to_table());
        }
        Command::PlotData { log, window } => {
            let text = std::fs::read_to_string(&log)
                .with_context(|| format!("reading {}", log.display()))?;
            print!("{}", smooth_log(&text, window)?);
        }
    }
    Ok(())
}
