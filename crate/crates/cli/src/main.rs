mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use entlib_core::Error;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "entlib",
    version,
    about = "Entity linking with a learned entity library"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides: `--section.key value`, or `--key value` when the key is unambiguous.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes checkpoint and history to the output directory.
    Train(Common),
    /// k-fold cross-validation; writes one checkpoint per fold and a fold manifest.
    Crossval(Common),
    /// Predict with one checkpoint or an averaged ensemble of several.
    Predict(Common),
    /// Score predictions against a gold corpus.
    Score(Common),
    /// Approximate randomization test between two prediction files.
    Sigtest(Common),
    /// Finite-difference audit of the model gradients.
    Gradcheck(Common),
    /// Write a synthetic corpus.
    Synth(Common),
    /// Mention counts by category and entity.
    Stats(Common),
}

pub enum Failure {
    /// A check did not hold (exit 1).
    Check(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) | Error::Degenerate(_) => 1,
        _ => 2,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("ENTLIB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "ENTLIB_THREADS = '{raw}' is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let (name, common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::Crossval(c) => ("crossval", c),
        Command::Predict(c) => ("predict", c),
        Command::Score(c) => ("score", c),
        Command::Sigtest(c) => ("sigtest", c),
        Command::Gradcheck(c) => ("gradcheck", c),
        Command::Synth(c) => ("synth", c),
        Command::Stats(c) => ("stats", c),
    };
    let config = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
    commands::write_snapshot(name, &config)?;
    match cli.command {
        Command::Train(_) => commands::train(&config),
        Command::Crossval(_) => commands::crossval(&config),
        Command::Predict(_) => commands::predict(&config),
        Command::Score(_) => commands::score(&config),
        Command::Sigtest(_) => commands::sigtest(&config),
        Command::Gradcheck(_) => commands::gradcheck(&config),
        Command::Synth(_) => commands::synth(&config),
        Command::Stats(_) => commands::stats(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("entlib: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("entlib: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
