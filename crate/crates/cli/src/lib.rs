//! Command-line driver: configuration files, experiment commands and their
//! CSV / JSON outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::{ConfigError, FwosSettings, Method, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fracwos", version, about = "Walk-on-spheres solvers for the fractional Poisson equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "FRACWOS_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the config value, then to all cores.
    #[arg(long, env = "FRACWOS_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory; defaults to the config value, then `out/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// FWoS estimates at test points.
    Solve(Common),
    /// Train an FNWoS or BFNWoS surrogate.
    Train(Common),
    /// FWoS error against the number of trajectories.
    Convergence(Common),
    /// BFNWoS with and without buffer replacement.
    Ablation(Common),
    /// Evaluate a saved surrogate at test points.
    EvalCheckpoint {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; defaults to `checkpoint.json` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve(c) | Command::Train(c) | Command::Convergence(c) | Command::Ablation(c) => c,
            Command::EvalCheckpoint { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Train(_) => "train",
            Command::Convergence(_) => "convergence",
            Command::Ablation(_) => "ablation",
            Command::EvalCheckpoint { .. } => "eval-checkpoint",
        }
    }
}

/// Loads the config and applies command-line overrides, which then appear in
/// every summary. Returns the config and the output directory.
pub fn resolve(cmd: &Command) -> Result<(RunConfig, PathBuf)> {
    let c = cmd.common();
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if c.workers.is_some() {
        cfg.workers = c.workers;
    }
    cfg.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.name.as_deref().unwrap_or(cmd.name())));
    cfg.output = Some(out.clone());
    Ok((cfg, out))
}

/// Runs one command and returns its summary.
pub fn execute(cmd: &Command) -> Result<serde_json::Value> {
    let (cfg, out) = resolve(cmd)?;
    commands::with_workers(cfg.workers, || -> Result<serde_json::Value> {
        Ok(match cmd {
            Command::Solve(_) => serde_json::to_value(commands::solve(&cfg, &out)?)?,
            Command::Train(_) => serde_json::to_value(commands::train(&cfg, &out)?)?,
            Command::Convergence(_) => serde_json::to_value(commands::convergence(&cfg, &out)?)?,
            Command::Ablation(_) => serde_json::to_value(commands::ablation(&cfg, &out)?)?,
            Command::EvalCheckpoint { checkpoint, .. } => {
                let ckpt = checkpoint
                    .clone()
                    .unwrap_or_else(|| out.join(commands::CHECKPOINT_FILE));
                serde_json::to_value(commands::eval_checkpoint(&cfg, &ckpt, &out)?)?
            }
        })
    })?
}

/// Machine-readable form of a failure, written to stderr by the binary.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    if let Some(c) = err.downcast_ref::<ConfigError>() {
        return json!({
            "error": {
                "kind": "config",
                "message": c.message,
                "path": c.path,
                "line": c.line,
            }
        });
    }
    let kind = if err.downcast_ref::<fracwos_core::Error>().is_some() {
        "solver"
    } else {
        "runtime"
    };
    json!({
        "error": {
            "kind": kind,
            "message": format!("{err:#}"),
        }
    })
}
