mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtca_core::pipeline::SplitName;

use commands::*;
use error::{CliError, Result};

/// Sparse-attention earnings-call volatility classifier with counterfactual
/// augmentation.
///
/// Every command writes its outputs and a manifest.json under --out. Set
/// MTCA_THREADS to cap the worker count.
#[derive(Parser)]
#[command(name = "mtca", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted-signal synthetic corpus with ground truth.
    Synth {
        /// JSON synthetic spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate, label, split and topic-index a corpus.
    Prepare {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Topic TSV: name<TAB>comma-separated terms.
        #[arg(long)]
        topics: PathBuf,
        /// ticker,date,close CSV; when given, labels are computed from it.
        #[arg(long)]
        prices: Option<PathBuf>,
        /// Replacement sentences (JSON lines).
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Volatility horizon in trading days.
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training rounds.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory of `prepare`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a finished round 1 found under --out.
        #[arg(long)]
        resume: bool,
    },
    /// Score counterfactual perturbations and select augmentations.
    Augment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory of `prepare`, which holds the replacement pool.
        #[arg(long = "source", alias = "data")]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "train")]
        split: SplitName,
        /// Round whose augmentation seed to use.
        #[arg(long, default_value_t = 2)]
        round: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain predictions from negative augmentation records.
    Explain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Ground-truth TSV; adds the top-1 localization rate.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, confusion matrix and baselines on one split.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MTCA_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("MTCA_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let manifest = match cli.command {
        Command::Synth { spec, seed, out } => synth(&SynthArgs { spec, seed, out })?,
        Command::Prepare { transcripts, embeddings, topics, prices, sources, horizon, config, out } => {
            prepare(&PrepareArgs { transcripts, embeddings, topics, prices, sources, horizon, config, out })?
        }
        Command::Train { config, data, out, resume } => train(&TrainArgs { config, data, out, resume })?,
        Command::Augment { config, data, model, trace, split, round, out } => {
            augment(&AugmentArgs { config, data, model, trace, split, round, out })?
        }
        Command::Explain { config, data, model, records, split, ground_truth, out } => {
            explain(&ExplainArgs { config, data, model, records, split, ground_truth, out })?
        }
        Command::Evaluate { config, data, model, split, out } => evaluate(&EvaluateArgs { config, data, model, split, out })?,
    };
    log::info!("{}: {} artifacts, manifest digest {}", manifest.command, manifest.artifacts.len(), manifest.digest);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
