use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eivuq_cli::{Command, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "eivuq", version, about = "EIV and non-EIV uncertainty experiments")]
struct Cli {
    /// Experiment config JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate or load the dataset and split it.
    Synth,
    /// Fit the ensemble, error model, and MC-dropout baseline.
    Train,
    /// Write per-query uncertainty reports.
    Uq,
    /// Write coverage, scatter, and flip tables plus a summary.
    Eval,
    /// Run synth, train, uq, and eval.
    Repro,
    /// Print the resolved config and exit.
    Config,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let result = cfg.map(|c| overrides.apply(c)).and_then(|cfg| {
        let command = match cli.command {
            Cmd::Synth => Command::Synth,
            Cmd::Train => Command::Train,
            Cmd::Uq => Command::Uq,
            Cmd::Eval => Command::Eval,
            Cmd::Repro => Command::Repro,
            Cmd::Config => {
                print!("{}", cfg.canonical_json());
                return Ok(());
            }
        };
        eivuq_cli::run(cfg, command, cli.threads)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(&e)
        }
    }
}
