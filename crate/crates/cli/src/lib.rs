//! Command-line driver for the task-transfer pipeline.
//!
//! Each subcommand is one stage; stages read and write files in the run
//! directory (`--out`) so they can be run, rerun and resumed separately.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use tasktransfer::learner::Backend;

use crate::commands::{Context, StageOutcome};
use crate::config::{resolve, FlagOverrides};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tasktransfer", version, about = "Predict which trained policy adapts best to a new instruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true, value_parser = parse_backend)]
    pub backend: Option<Backend>,
    /// Overwrite the outputs of a finished stage.
    #[arg(long, global = true)]
    pub force: bool,
    /// train-transfer: use the synthetic verb-dominance dataset.
    #[arg(long, global = true)]
    pub synthetic: bool,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the experiment plan and train one policy per base instruction.
    TrainBase,
    /// Adapt every converged base to every transfer instruction.
    Sample,
    /// Turn adaptation samples into pairwise comparison records.
    BuildDataset,
    /// Train the transfer classifier and report holdout accuracy.
    TrainTransfer,
    /// Run the whole pipeline over a grid of k and p.
    Grid,
    /// Matching versus differing adaptation curves per instruction part.
    Report,
    /// Rank stored base policies for a new instruction.
    Select {
        instruction: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
}

/// Resolves the config and runs the command on a pool of `parallel`
/// threads. Results do not depend on the pool size.
pub fn run(cli: Cli, environment: &BTreeMap<String, String>) -> Result<StageOutcome, CliError> {
    let flags = FlagOverrides {
        seed: cli.seed,
        parallel: cli.parallel,
        out: cli.out.clone(),
        backend: cli.backend,
    };
    let cfg = resolve(cli.config.as_deref(), environment, &flags)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let ctx = Context::new(cfg, cli.force, cli.synthetic);
    pool.install(|| match cli.command {
        Command::TrainBase => commands::train_base_cmd(&ctx),
        Command::Sample => commands::sample_cmd(&ctx),
        Command::BuildDataset => commands::build_dataset_cmd(&ctx),
        Command::TrainTransfer => commands::train_transfer_cmd(&ctx),
        Command::Grid => commands::grid_cmd(&ctx),
        Command::Report => commands::report_cmd(&ctx),
        Command::Select {
            instruction,
            model,
            snapshots,
        } => commands::select_cmd(&ctx, &instruction, model, snapshots).map(|r| r.1),
    })
}
