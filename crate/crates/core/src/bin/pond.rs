use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pond::harness::replay::run_replay;
use pond::harness::sweep::{write_lp_json, CellSelection};
use pond::harness::{
    load_config, load_dataset, run_single, run_sweep, synthesize_dataset, write_dataset,
    ExperimentConfig, HarnessError, SweepContext,
};

#[derive(Parser)]
#[command(name = "pond", version, about = "Constrained online dispatching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Replace the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fluid LP of the config's instance and write lp.json.
    SolveLp {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one (algorithm, epsilon mode, horizon) cell and write a per-slot trace of trial 0.
    Run {
        config: PathBuf,
        /// Algorithm label, e.g. pond_ucb, pond_moss, etc (default: first listed).
        #[arg(long)]
        algorithm: Option<String>,
        /// Epsilon-mode label, e.g. zero or "over_sqrt_t(0.5)" (default: first listed).
        #[arg(long)]
        epsilon_mode: Option<String>,
        /// Horizon (default: first listed).
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every cell of the config and write aggregate.csv and lp.json.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate the config's algorithms on a uniformly logged dataset.
    Replay {
        config: PathBuf,
        dataset: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a synthetic uniformly logged dataset drawn from the config's instance.
    SynthDataset {
        config: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        records: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load(path: &PathBuf, o: &Overrides) -> Result<ExperimentConfig, HarnessError> {
    let mut config = load_config(path)?;
    if let Some(seed) = o.seed {
        config.master_seed = seed;
    }
    if let Some(dir) = &o.out_dir {
        config.output_dir = dir.clone();
    }
    if o.threads.is_some() {
        config.threads = o.threads;
    }
    config.validate()?;
    Ok(config)
}

fn execute(command: Command) -> Result<serde_json::Value, HarnessError> {
    match command {
        Command::SolveLp { config, overrides } => {
            let config = load(&config, &overrides)?;
            let ctx = SweepContext::new(&config)?;
            let dir = &config.output_dir;
            std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join("lp.json");
            write_lp_json(&path, &ctx)?;
            Ok(json!({
                "lp_json": path,
                "status": ctx.lp.status,
                "objective": ctx.lp.objective,
                "delta": ctx.delta,
            }))
        }
        Command::Run {
            config,
            algorithm,
            epsilon_mode,
            horizon,
            overrides,
        } => {
            let config = load(&config, &overrides)?;
            let sel = CellSelection {
                algorithm,
                epsilon_mode,
                horizon,
            };
            let out = run_single(&config, &sel)?;
            Ok(json!({
                "aggregate_csv": out.aggregate_csv,
                "trace_csv": out.trace_csv,
                "cell": {
                    "algorithm": out.outcome.algorithm,
                    "epsilon_mode": out.outcome.epsilon_mode,
                    "T": out.outcome.horizon,
                    "regret_mean": out.outcome.aggregate().map(|a| a.regret_mean),
                },
            }))
        }
        Command::Sweep { config, overrides } => {
            let config = load(&config, &overrides)?;
            let out = run_sweep(&config)?;
            let failed = out.outcomes.iter().filter(|o| o.result.is_err()).count();
            Ok(json!({
                "aggregate_csv": out.aggregate_csv,
                "trials_csv": out.trials_csv,
                "lp_json": out.lp_json,
                "cells": out.outcomes.len(),
                "failed_cells": failed,
            }))
        }
        Command::Replay {
            config,
            dataset,
            overrides,
        } => {
            let config = load(&config, &overrides)?;
            let inst = config.build_instance()?;
            let data = load_dataset(
                &dataset,
                inst.n_types,
                inst.n_servers,
                config.replay.logging_policy,
            )?;
            let out = run_replay(&config, &data)?;
            Ok(json!({
                "replay_csv": out.replay_csv,
                "records": data.records.len(),
                "dataset_mean_reward": data.mean_reward(),
                "cells": out.outcomes.len(),
            }))
        }
        Command::SynthDataset {
            config,
            output,
            records,
            overrides,
        } => {
            let config = load(&config, &overrides)?;
            let inst = config.build_instance()?;
            let data = synthesize_dataset(&inst, records, config.master_seed);
            write_dataset(&output, &data)?;
            Ok(json!({
                "dataset": output,
                "records": records,
                "mean_reward": data.mean_reward(),
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut report = json!({ "error": { "code": e.code(), "message": e.to_string() } });
            if let Some((line, column)) = e.location() {
                report["error"]["line"] = json!(line);
                report["error"]["column"] = json!(column);
            }
            if let HarnessError::Config(problems) = &e {
                report["error"]["problems"] = json!(problems);
            }
            eprintln!("{report}");
            ExitCode::from(match e {
                HarnessError::Parse(_) | HarnessError::Config(_) | HarnessError::Instance(_) => 2,
                _ => 1,
            })
        }
    }
}
