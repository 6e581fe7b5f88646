//! Command-line driver: dataset synthesis, training phases, baselines,
//! evaluation, standalone distances and seed sweeps.

pub mod commands;
pub mod error;
pub mod spec;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Options;
pub use error::CliError;
pub use spec::ExperimentSpec;

#[derive(Debug, Parser)]
#[command(name = "wassalign", version, about = "Sliced-Wasserstein cross-modal transfer experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment spec file (key = value lines).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the run seed (the data seed for `synth`, the projection seed for `swd`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Single-threaded numerics and zeroed timings, for byte-identical reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate paired synthetic datasets (A and B, train/val/test).
    Synth,
    /// Train the source branch and classifier on modality A.
    Pretrain,
    /// Few-shot transfer from a pretraining checkpoint.
    Transfer,
    /// Target-only or fine-tuning baseline (spec key `baseline`).
    Baseline,
    /// Evaluate a checkpoint on a dataset directory.
    Eval,
    /// Sliced Wasserstein distance between two [M, d] tensor files.
    Swd {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 50)]
        projections: usize,
    },
    /// Run the experiment over the spec's seeds and aggregate.
    Sweep,
}

impl Cli {
    pub fn options(&self) -> Options {
        Options {
            spec: self.spec.clone(),
            out: self.out.clone(),
            seed: self.seed,
            force: self.force,
            deterministic: self.deterministic,
        }
    }
}

/// Runs one command and returns what it prints on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let opts = cli.options();
    if opts.deterministic {
        wassalign::parallel::force_sequential(true);
    }
    match &cli.command {
        Command::Synth => commands::synth(&opts),
        Command::Pretrain => commands::pretrain(&opts),
        Command::Transfer => commands::transfer(&opts),
        Command::Baseline => commands::baseline(&opts),
        Command::Eval => commands::eval(&opts),
        Command::Swd { a, b, projections } => commands::swd(a, b, *projections, &opts),
        Command::Sweep => commands::sweep(&opts),
    }
}
