mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Metric, Scheme};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DCIS_THREADS";

#[derive(Parser)]
#[command(
    name = "dcis",
    version,
    about = "Per-dimension RoPE scaling search on a toy transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the toy model at its trained context.
    Train(TrainArgs),
    /// Continue training with scaling factors installed.
    Finetune(FinetuneArgs),
    /// Search scaling factors for a checkpoint.
    Search(SearchArgs),
    /// Evaluate perplexity or key recall.
    Eval(EvalArgs),
    /// Print evaluation budgets.
    Budget(BudgetArgs),
    /// Repeat the search over a range of one hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config with `model`, `training`, `search` and `eval` sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON Lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Factors JSON to train under.
    #[arg(long)]
    factors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    context_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct SearchFlags {
    /// Initial increment range.
    #[arg(long, num_args = 2, value_names = ["L", "R"], allow_negative_numbers = true)]
    range: Option<Vec<f64>>,
    /// Increments per segment (at least 3).
    #[arg(long)]
    increments: Option<usize>,
    #[arg(long)]
    target_length: Option<usize>,
    /// Scores above this are discarded.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    init: Option<Scheme>,
    /// Extension ratio used by the initial scheme.
    #[arg(long)]
    scale: Option<f64>,
    /// Number of held-out windows the objective scores.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Factors JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Search trace (JSON Lines); defaults to `<out>.trace.jsonl`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    flags: SearchFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Factors JSON; without it `--scheme` picks the factors.
    #[arg(long, conflicts_with = "scheme")]
    factors: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, value_enum)]
    metric: Option<Metric>,
    #[arg(long, num_args = 1..)]
    lengths: Option<Vec<usize>>,
    /// Passkey trials per length.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    partial_credit: bool,
    /// Report path; `.csv` writes CSV, anything else JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long)]
    head_dim: u64,
    #[arg(long, default_value_t = 10)]
    increments: u64,
    /// Evolutionary search iterations and population.
    #[arg(long, num_args = 2, value_names = ["T", "P"])]
    evo: Option<Vec<u64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParamArg {
    Range,
    #[value(name = "C", alias = "increments")]
    C,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    param: SweepParamArg,
    /// Half-widths `k` for `range` (searching `[-k, k]`), counts for `C`.
    #[arg(long, num_args = 0..)]
    values: Vec<f64>,
    /// Report path; `.csv` writes CSV, anything else JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: SearchFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::init_threads().and_then(|()| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Search(a) => commands::search(a),
        Command::Eval(a) => commands::eval(a),
        Command::Budget(a) => commands::budget(a),
        Command::Sweep(a) => commands::sweep(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code as u8)
        }
    }
}
