mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reseq_core::eval::OverlapStrategy;
use reseq_core::pipeline::ProviderChoice;

/// Exit code for command-line usage errors. Kept apart from the engine's
/// error classes, which occupy 2 through 9.
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "reseq", version, about = "Resequence video frames into new smooth orderings")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a dataset and summarize it.
    Ingest(DatasetArgs),
    /// Train the frame-distance metric and save the model.
    TrainMetric {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Model file to write.
        #[arg(long, default_value = "metric.rsem")]
        out: PathBuf,
        /// Training report to write as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compute consecutive-pair flows, tendencies, and motion segments.
    Flows {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Directory for `.flo` files and `motion.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the frame relation graph and export it.
    Graph {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Graph JSON to write; prints a summary only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the frame embeddings.
        #[arg(long)]
        embeddings_out: Option<PathBuf>,
    },
    /// Generate a new ordering from a start frame.
    Resequence {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Sequence JSON to write; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Copy the ordered frames into this directory as PNGs.
        #[arg(long)]
        frames_out: Option<PathBuf>,
    },
    /// Score sequence files against the source ordering.
    Evaluate {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Sequence JSON files (anything with an `indices` array).
        #[arg(required = true)]
        sequences: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Strategy::Runs)]
        strategy: Strategy,
        /// Report JSON to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API for the interactive viewer.
    Serve {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Allowed browser origin; repeat for several. Any origin when absent.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
}

#[derive(Args, Debug, Clone)]
struct DatasetArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Provider::Auto)]
    provider: Provider,
    /// Use raw pixel-feature distances instead of the learned metric.
    #[arg(long, conflicts_with = "provider")]
    plain_euclidean: bool,
    /// Artifact cache directory; defaults to `.reseq-cache` beside the manifest.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the artifact cache.
    #[arg(long, conflicts_with = "cache_dir")]
    no_cache: bool,
    /// Use a model saved by `train-metric` instead of training.
    #[arg(long, conflicts_with_all = ["provider", "plain_euclidean"])]
    model: Option<PathBuf>,
    /// Downsampled side used for pixel features and the learned metric.
    #[arg(long)]
    feature_side: Option<usize>,
    /// Output dimension of the learned metric.
    #[arg(long)]
    metric_dim: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    #[arg(long)]
    start: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    temperature: Option<f64>,
    /// Disable the directional constraint.
    #[arg(long)]
    no_cd: bool,
    /// Disable the motion-coherence constraint.
    #[arg(long)]
    no_ct: bool,
    #[arg(long)]
    max_length: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Provider {
    Auto,
    Pixel,
    Learned,
    External,
}

impl From<Provider> for ProviderChoice {
    fn from(p: Provider) -> Self {
        match p {
            Provider::Auto => ProviderChoice::Auto,
            Provider::Pixel => ProviderChoice::Pixel,
            Provider::Learned => ProviderChoice::Learned,
            Provider::External => ProviderChoice::External,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Runs,
    Lcs,
}

impl From<Strategy> for OverlapStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Runs => OverlapStrategy::Runs,
            Strategy::Lcs => OverlapStrategy::Lcs,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<reseq_core::Error>() {
        Some(core) => core.class().exit_code() as u8,
        None => match e.downcast_ref::<reseq_service::ApiError>() {
            Some(reseq_service::ApiError::Core(core)) => core.class().exit_code() as u8,
            _ => 1,
        },
    }
}
