//! Command-line front end for the adapter fine-tuning toolkit: dataset
//! synthesis, feature extraction, training, cross-validation, adapter
//! merging, and result tables, all from one binary.
//!
//! Every command is deterministic given its inputs and the configured
//! seed; output files never embed timestamps. Failures map to exit codes
//! by cause: 2 for configuration errors, 3 for data errors, 4 for numeric
//! failures.

mod commands;
mod config;
mod pipeline;

use clap::{Parser, Subcommand};
use peftkit_core::Error;

#[derive(Parser, Debug)]
#[command(name = "peftkit", version, about = "Adapter fine-tuning toolkit")]
struct Cli {
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus and its manifest.
    Synth(commands::synth::SynthArgs),
    /// Extract features from a manifest into reusable artifacts.
    Features(commands::features::FeaturesArgs),
    /// Train one configured run and write its metrics.
    Train(commands::train::TrainArgs),
    /// Stratified k-fold cross-validation of an adapter variant.
    Cv(commands::cv::CvArgs),
    /// Fold a trained adapter into its base encoder checkpoint.
    Merge(commands::merge::MergeArgs),
    /// Tabulate metrics files from one or more runs.
    Report(commands::report::ReportArgs),
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Data(_)
        | Error::Format(_)
        | Error::Rate(_)
        | Error::Length(_)
        | Error::Label(_)
        | Error::Parse(_)
        | Error::Checkpoint(_)
        | Error::Io(_) => 3,
        Error::Degenerate(_) | Error::Numeric(_) => 4,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        // A pool from a prior init in the same process is fine to reuse.
        log::warn!("rayon pool already initialized: {e}");
    }
    let result = match &cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Features(args) => commands::features::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Cv(args) => commands::cv::run(args),
        Command::Merge(args) => commands::merge::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
