//! `diffpure`: data generation, training, attacks, purification and
//! evaluation for diffusion-purified MoDL reconstruction.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "diffpure", version, about = "Diffusion purification for unrolled MRI reconstruction")]
struct Cli {
    /// JSON configuration for the subcommand; relative paths inside it
    /// resolve against the file's directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantom train/val/test sets and the forward operator.
    GenData,
    /// Train the score network by denoising score matching.
    TrainScore,
    /// Train MoDL end to end on clean measurements.
    TrainModl,
    /// Fine-tune MoDL on purified, noised measurements.
    FineTune,
    /// Adversarially train MoDL.
    AtTrain,
    /// Compute per-image attacks against a MoDL checkpoint.
    Attack,
    /// Purify measurements with the score model.
    Purify,
    /// Select the switching step by MMD between two image sets.
    PstSelect,
    /// Draw prior samples from the score model.
    Sample,
    /// Run the scenario/method sweep of an experiment config.
    Evaluate,
    /// Numerically check the KL-decay results.
    VerifyTheorem,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIFFPURE_LOG", "info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let ctx = commands::Context { config: cli.config, seed: cli.seed, out: cli.out };
    let result = match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::TrainScore => commands::train_score(&ctx),
        Command::TrainModl => commands::train_modl(&ctx),
        Command::FineTune => commands::fine_tune(&ctx),
        Command::AtTrain => commands::at_train(&ctx),
        Command::Attack => commands::attack(&ctx),
        Command::Purify => commands::purify(&ctx),
        Command::PstSelect => commands::pst_select(&ctx),
        Command::Sample => commands::sample(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::VerifyTheorem => commands::verify_theorem(&ctx),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
