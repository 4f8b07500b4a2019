//! `graft`: command-line driver for the sparse graph-attention encoder.
//!
//! One subcommand per invocation; every subcommand is deterministic given
//! its flags and seed. Logs go to standard error; machine-readable output
//! goes to files named by explicit flags (`eval` and `ensemble` also print
//! their metrics JSON to standard out, since that is their entire point).
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

// The bench subcommand measures peak allocation, which requires every
// allocation in the process to be counted.
#[global_allocator]
static ALLOC: graft_core::bench::CountingAllocator = graft_core::bench::CountingAllocator;

#[derive(Parser)]
#[command(name = "graft", version, about = "Graph-conditioned sparse attention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse mini-language sources and emit one graph JSON per file.
    Parse(ParseArgs),
    /// Build graphs for a corpus and report structural statistics.
    Graph(GraphArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train a variable-misuse model on a dataset file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and print metrics JSON.
    Eval(EvalArgs),
    /// Evaluate a deep/shallow checkpoint pair as an ensemble.
    Ensemble(EnsembleArgs),
    /// Run the scaling benchmark harness.
    Bench(BenchArgs),
    /// Train with the structural mask replaced by a synthetic one.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct ParseArgs {
    /// A `.mini` source file, or a directory scanned for `*.mini`.
    #[arg(long)]
    input: PathBuf,
    /// Directory that receives one `<stem>.json` graph per source file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    /// A `.mini` source file, or a directory scanned for `*.mini`.
    #[arg(long)]
    input: PathBuf,
    /// Report the corpus-level edge-versus-node regression slope instead
    /// of per-file summaries.
    #[arg(long)]
    stats: bool,
    /// Write the full statistics table as JSON (requires --stats).
    #[arg(long, requires = "stats")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of independently seeded model/sample instances to check.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Maximum allowed relative error between analytic and numeric
    /// gradients.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Write a JSON report of per-seed worst errors.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// JSONL dataset (one sample per line). With --gen-samples the file is
    /// first generated and written here.
    #[arg(long)]
    dataset: PathBuf,
    /// Flat key=value config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Add sinusoidal positional encodings to token rows.
    #[arg(long, value_parser = parse_switch, default_value = "off", action = clap::ArgAction::Set)]
    pe: bool,
    /// Apply attention diffusion after each attention layer.
    #[arg(long, value_parser = parse_switch, default_value = "on", action = clap::ArgAction::Set)]
    diffusion: bool,
    /// Diffusion hop count (overrides the config file).
    #[arg(long)]
    k: Option<usize>,
    /// Diffusion restart probability (overrides the config file).
    #[arg(long)]
    alpha: Option<f64>,
    /// Seed for parameter init, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where the trained model checkpoint is written.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional JSON report: per-epoch history plus final validation
    /// metrics of the saved model.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Generate the dataset (writing it to --dataset) before training.
    #[arg(long)]
    gen_samples: Option<usize>,
    /// Fraction of generated samples that contain a bug.
    #[arg(long, default_value_t = 0.5)]
    gen_bug_rate: f64,
    /// Minimum statements per generated program (at least 3).
    #[arg(long, default_value_t = 3)]
    gen_min_statements: usize,
    /// Maximum statements per generated program.
    #[arg(long, default_value_t = 10)]
    gen_max_statements: usize,
    /// Seed for dataset generation, independent of --seed so several
    /// training seeds can share one dataset.
    #[arg(long, default_value_t = 7)]
    gen_seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Checkpoint that provides localization and repair pointers.
    #[arg(long)]
    deep: PathBuf,
    /// Checkpoint that gates on bug presence.
    #[arg(long)]
    shallow: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Largest sequence length; points run at 100, 200, ... up to this.
    #[arg(long, default_value_t = 4096)]
    max_len: usize,
    /// Comma-separated subset of sparse, sparse_diffusion_k2,
    /// sparse_diffusion_k6, dense_mask, dense_full. Default: all.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Timed runs per point (one warm-up run is not counted).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Directory that receives curves.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Dense variants are skipped above this length.
    #[arg(long, default_value_t = 4096)]
    dense_cutoff: usize,
    /// Estimated-footprint ceiling in bytes; dense points above it are
    /// skipped, not attempted.
    #[arg(long, default_value_t = 2u64 << 30)]
    memory_budget: u64,
    /// Random edges sampled per node when building synthetic masks.
    #[arg(long, default_value_t = 3)]
    edges_per_token: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Mask to train under: the program's own graph, a random mask of the
    /// given density, or the complete mask.
    #[arg(long, value_enum)]
    mask: MaskKind,
    /// Entry density of random masks as a fraction of n^2. Raised per
    /// sample to the minimum that covers the mandatory self-loops.
    #[arg(long, default_value_t = 0.03)]
    density: f64,
    /// Seed for random mask sampling (per-sample streams derive from it).
    #[arg(long, default_value_t = 13)]
    mask_seed: u64,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MaskKind {
    Graph,
    Random,
    Complete,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse(args) => commands::parse::run(&args),
        Command::Graph(args) => commands::graph::run(&args),
        Command::Gradcheck(args) => commands::gradcheck::run(&args),
        Command::Train(args) => commands::train::run(&args, None),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Ensemble(args) => commands::ensemble::run(&args),
        Command::Bench(args) => commands::bench::run(&args),
        Command::Ablate(args) => commands::train::run(
            &args.train,
            Some(commands::train::MaskAblation {
                kind: args.mask,
                density: args.density,
                seed: args.mask_seed,
            }),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
