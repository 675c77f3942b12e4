mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Args, Parser, Subcommand};
use structdist::Exclusion;

/// Train and evaluate linear structural maps over contextualized word vectors.
#[derive(Debug, Parser)]
#[command(name = "structdist", version)]
struct Cli {
    /// Cap on worker threads; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config with optional `seed`, `synth`, `train` and `eval` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output of the run.
    #[arg(long)]
    pub out: PathBuf,
    /// Global seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Transform {
    /// Map to apply before evaluating.
    #[arg(long, conflicts_with = "baseline")]
    pub model: Option<PathBuf>,
    /// Evaluate the untransformed vectors.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory (vectors.svec + meta.jsonl).
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub transform: Transform,
    /// Number of nearest-neighbour queries.
    #[arg(long)]
    pub queries: Option<usize>,
    /// Candidates a query may not retrieve: self, sentence or group.
    #[arg(long)]
    pub exclusion: Option<Exclusion>,
    /// Restrict queries to the N POS tags with the most ambiguous dependency labels.
    #[arg(long, num_args = 0..=1, default_missing_value = "5", value_name = "N")]
    pub hard: Option<usize>,
    /// Comma-separated cluster counts for purity.
    #[arg(long, value_delimiter = ',', value_name = "K,...")]
    pub purity: Option<Vec<usize>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Validate externally produced vector and metadata files and store them as a dataset.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        meta: PathBuf,
    },
    /// Write the pair samples training would draw.
    SamplePairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train a map; writes epoch checkpoints and map.smap.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Nearest-neighbour agreement, purity and probe in one report.
    Eval(EvalArgs),
    /// Nearest-neighbour agreement only, with per-query results.
    EvalNn(EvalArgs),
    /// K-means dependency-label purity.
    EvalPurity {
        #[command(flatten)]
        args: EvalArgs,
        /// Cluster these row-aligned vectors (e.g. 2-D projections) instead.
        #[arg(long, conflicts_with_all = ["model", "baseline"])]
        vectors: Option<PathBuf>,
    },
    /// Few-shot dependency-label probe.
    Probe(EvalArgs),
    /// Dump the (transformed) vectors and token labels for external tools.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        transform: Transform,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    // Always explicit, so the pool size never comes from the environment.
    let threads = match cli.threads {
        Some(0) => anyhow::bail!("--threads must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Ingest { common, vectors, meta } => commands::ingest(&common, &vectors, &meta),
        Command::SamplePairs { common, dataset } => commands::sample_pairs(&common, &dataset),
        Command::Train { common, dataset } => commands::train(&common, &dataset),
        Command::Eval(args) => commands::eval(&args),
        Command::EvalNn(args) => commands::eval_nn(&args),
        Command::EvalPurity { args, vectors } => commands::eval_purity(&args, vectors.as_deref()),
        Command::Probe(args) => commands::probe(&args),
        Command::Export {
            common,
            dataset,
            transform,
        } => commands::export(&common, &dataset, &transform),
    }
}
