//! `ipts`: train a victim model, forge adversarial corpora, evolve filter
//! sequences, calibrate detector profiles and evaluate them.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use commands::{
    AttackGenArgs, CalibrateArgs, DetectArgs, EvalArgs, EvolveArgs, PoolArgs, TrainArgs,
};

#[derive(Debug, Parser)]
#[command(
    name = "ipts",
    version,
    about = "Evolved image-processing sequences for adversarial input detection"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,
    /// Flat key=value file; flags given on the command line win.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train the victim classifier on an IDX dataset.
    Train(TrainArgs),
    /// Generate an adversarial corpus against a trained model.
    AttackGen(AttackGenArgs),
    /// Split the corpora and evolve a filter sequence.
    Evolve(EvolveArgs),
    /// Build a detector profile from a genome and training corpora.
    Calibrate(CalibrateArgs),
    /// Merge profile files into a pool.
    Pool(PoolArgs),
    /// Classify individual images.
    Detect(DetectArgs),
    /// Score a profile or pool on held-out corpora.
    Eval(EvalArgs),
}

/// Errors that map to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// `--config` is located before clap runs because the file may supply
/// otherwise required arguments.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(arg) = it.next() {
        let arg = arg.to_string_lossy();
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = arg.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn parse_cli() -> Result<Cli, clap::Error> {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let Some(path) = config_path(&argv) else {
        return Cli::try_parse_from(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Cli::command().error(
            clap::error::ErrorKind::Io,
            format!("reading config {}: {e}", path.display()),
        )
    })?;
    let merged = config::parse(&text)
        .and_then(|cfg| config::merge_args(Cli::command(), argv, &cfg))
        .map_err(|e| {
            Cli::command().error(clap::error::ErrorKind::ValueValidation, format!("{e:#}"))
        })?;
    Cli::try_parse_from(merged)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.global.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global()?;
    }
    let g = &cli.global;
    match &cli.command {
        Cmd::Train(a) => commands::train(g, a),
        Cmd::AttackGen(a) => commands::attack_gen(g, a),
        Cmd::Evolve(a) => commands::evolve(g, a),
        Cmd::Calibrate(a) => commands::calibrate(g, a),
        Cmd::Pool(a) => commands::pool(g, a),
        Cmd::Detect(a) => commands::detect(g, a),
        Cmd::Eval(a) => commands::eval(g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match parse_cli() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
