//! `concord`: prepare corpora, train and evaluate the (dis)agreement
//! classifier, and run the experiment protocols.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 numerical check failure.

mod commands;
mod config;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "concord", version, about = "Quote/response (dis)agreement classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Embeddings and lexicons shared by every command that featurizes text.
#[derive(Args, Clone)]
pub struct Resources {
    /// Text embeddings, one `token v1 ... vd` per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Lexicon TSV as NAME=PATH (or PATH, named by its file stem). Repeatable.
    #[arg(long = "lexicon", value_name = "NAME=PATH")]
    pub lexicons: Vec<String>,
}

/// Labeled pairs plus optional explicit dev/test files. Without `--dev`
/// the pairs are split by the configured fractions.
#[derive(Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, requires = "dev")]
    pub test: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build labeled pair JSONL from thread posts or IAC annotations.
    Prepare {
        #[arg(long, conflicts_with_all = ["iac", "pairs"], required_unless_present = "iac")]
        threads: Option<PathBuf>,
        #[arg(long, requires = "pairs")]
        iac: Option<PathBuf>,
        /// Unlabeled `{id, quote, response}` pairs the IAC scores refer to.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, history JSON and run manifest.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        resources: Resources,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Defaults to `<checkpoint>.history.json`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Defaults to `<checkpoint>.manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Held-out metrics CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Metrics CSV of a checkpoint on labeled pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        resources: Resources,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label and class probabilities for one pair, or JSONL for a file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        resources: Resources,
        #[arg(long, requires = "response", conflicts_with = "pairs")]
        quote: Option<String>,
        #[arg(long, requires = "quote")]
        response: Option<String>,
        /// Unlabeled `{id, quote, response}` JSONL.
        #[arg(long, required_unless_present = "quote")]
        pairs: Option<PathBuf>,
    },
    /// Adapt a pretrained checkpoint to a new dataset.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        resources: Resources,
        /// direct | tuning | transfer | retrain_last_2 | retrain_last_3 | all
        #[arg(long)]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Adapted model (single mode only).
        #[arg(long)]
        out_checkpoint: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Maximum-sequence-length sweep.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        resources: Resources,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        lengths: Vec<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Lexicon-only / GRU-only / combined feature ablation.
    Ablation {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        resources: Resources,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of the full default model on built-in data.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Full JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Label counts, lengths and a length histogram CSV.
    Stats {
        #[arg(long)]
        pairs: PathBuf,
        /// Histogram CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare {
            threads,
            iac,
            pairs,
            out,
        } => commands::prepare(threads.as_deref(), iac.as_deref(), pairs.as_deref(), &out),
        Command::Train {
            data,
            resources,
            config,
            out_checkpoint,
            history,
            manifest,
            report,
        } => commands::train(commands::TrainArgs {
            data,
            resources,
            config,
            out_checkpoint,
            history,
            manifest,
            report,
        }),
        Command::Eval {
            checkpoint,
            pairs,
            resources,
            out,
        } => commands::eval(&checkpoint, &pairs, &resources, out.as_deref()),
        Command::Predict {
            checkpoint,
            resources,
            quote,
            response,
            pairs,
        } => commands::predict(&checkpoint, &resources, quote.zip(response), pairs.as_deref()),
        Command::Transfer {
            checkpoint,
            data,
            resources,
            mode,
            config,
            out_checkpoint,
            report,
        } => commands::transfer(
            &checkpoint,
            &data,
            &resources,
            &mode,
            config.as_deref(),
            out_checkpoint.as_deref(),
            report.as_deref(),
        ),
        Command::Sweep {
            data,
            resources,
            config,
            lengths,
            report,
        } => commands::sweep(&data, &resources, config.as_deref(), &lengths, report.as_deref()),
        Command::Ablation {
            data,
            resources,
            config,
            report,
        } => commands::ablation(&data, &resources, config.as_deref(), report.as_deref()),
        Command::Gradcheck {
            seed,
            batch,
            samples,
            tolerance,
            report,
        } => commands::gradcheck(seed, batch, samples, tolerance, report.as_deref()),
        Command::Stats { pairs, out } => commands::stats(&pairs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
