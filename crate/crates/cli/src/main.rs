mod cache;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pat_core::phantom::Split;

use config::{ExperimentConfig, Profile};
use error::{CliError, Result};

/// Self-supervised photoacoustic reconstruction with an unknown speed law.
#[derive(Debug, Parser)]
#[command(name = "pat", version)]
struct Cli {
    /// TOML file overriding the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Validate the configuration and print the plan without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Use this run directory instead of a timestamped one.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate phantoms and boundary records into the dataset cache.
    Generate,
    /// Simulate boundary records for every phantom of a split file.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train on the cached dataset.
    Train,
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Write `(v, M(v), Γ(v))` for a checkpoint.
    ExportCurves {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Simulate { .. } => "simulate",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::ExportCurves { .. } => "export-curves",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(format!("--threads {n}: {e}")))?;
    }
    let cfg = ExperimentConfig::load(cli.profile, cli.config.as_deref(), cli.seed)?;
    if cli.dry_run {
        print!("{}", commands::plan(&cfg, cli.command.name())?);
        return Ok(());
    }
    let explicit = cli.run_dir.as_deref();
    match &cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Simulate { input, output } => commands::simulate(&cfg, input, output),
        Command::Train => commands::train_cmd(&cfg, explicit),
        Command::Eval { checkpoint, split } => commands::eval_cmd(&cfg, checkpoint, (*split).into(), explicit),
        Command::ExportCurves { checkpoint, points } => commands::export_curves(&cfg, checkpoint, *points, explicit),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
