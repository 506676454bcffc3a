//! `fedmkgc`: partition, train, evaluate and sweep federated multimodal
//! knowledge graph completion experiments.
//!
//! Exit status is 0 on success, 1 for configuration errors and 2 for
//! runtime failures.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedmkgc::dataset::DataError;
use fedmkgc::fedproto::ProtoError;
use fedmkgc::hide::HideError;
use fedmkgc::objectives::ObjectiveError;
use thiserror::Error;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ProtoError> for CliError {
    fn from(e: ProtoError) -> Self {
        match &e {
            ProtoError::Config(_)
            | ProtoError::Data(DataError::Config(_))
            | ProtoError::Hide(HideError::Config(_))
            | ProtoError::Objective(ObjectiveError::Config(_)) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "fedmkgc", version, about = "Federated multimodal knowledge graph completion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the per-client dataset directories.
    Partition(Common),
    /// Train until early stopping; write metrics, checkpoint and manifests.
    Train(Common),
    /// Test metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One training run per point of the configured sweep.
    Ablate(Common),
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf), CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        let out = cfg
            .out
            .clone()
            .ok_or_else(|| CliError::Config("no output directory: set `out` or pass --out".into()))?;
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Partition(c) => {
            let (cfg, out) = c.resolve()?;
            let m = commands::partition(&cfg, &out)?;
            println!(
                "{} clients, {:.1} entities / {:.1} relations / {:.1} triples per client -> {}",
                m.num_clients,
                m.avg_entities,
                m.avg_relations,
                m.avg_triples,
                out.display()
            );
        }
        Command::Train(c) => {
            let (cfg, out) = c.resolve()?;
            let (m, _) = commands::train(&cfg, &out)?;
            println!(
                "best round {} valid mrr {:.4} after {} rounds -> {}",
                m.best_round.map_or("-".to_string(), |r| r.to_string()),
                m.best_valid_mrr,
                m.rounds_run,
                out.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, out) = common.resolve()?;
            commands::eval(&cfg, &checkpoint, &out)?;
        }
        Command::Ablate(c) => {
            let (cfg, out) = c.resolve()?;
            let path = commands::ablate(&cfg, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
