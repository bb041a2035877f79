use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Streaming graph-filter embeddings for dynamic graphs.
#[derive(Parser, Debug)]
#[command(name = "dynaprop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Propagate features over a graph, optionally through an event stream
    /// or snapshot directory, and write the embedding timeline.
    Propagate(PropagateArgs),
    /// Replay a long event stream with deferred pushing, reporting each
    /// checkpoint as it is taken.
    Stream(StreamArgs),
    /// Check every checkpoint against from-scratch propagation, or against
    /// the exact series with --against-oracle.
    Verify(VerifyArgs),
    /// Convert an embedding file to another format, or write its deltas.
    Export(ExportArgs),
    /// Show the edge and degree changes between two snapshot files.
    Diff(DiffArgs),
}

#[derive(Args, Debug, Clone)]
struct FilterArgs {
    /// Teleport probability of the filter weights.
    #[arg(long, default_value_t = dynaprop::schedule::DEFAULT_ALPHA)]
    alpha: f64,
    /// Convolution exponent.
    #[arg(long, default_value_t = dynaprop::schedule::DEFAULT_BETA)]
    beta: f64,
    /// Push threshold.
    #[arg(long, default_value_t = dynaprop::schedule::DEFAULT_R_MAX)]
    rmax: f64,
    #[arg(long, value_enum, default_value_t = FilterArg::Ppr)]
    filter: FilterArg,
    /// Column workers (default: all cores).
    #[arg(long, env = "DYNAPROP_WORKERS")]
    workers: Option<usize>,
    /// Push cap per column per convergence call.
    #[arg(long, default_value_t = dynaprop::push::DEFAULT_WORK_BUDGET)]
    budget: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FilterArg {
    Ppr,
    Highpass,
    Both,
}

#[derive(Args, Debug, Clone)]
struct GraphInput {
    /// Initial graph, one `u v [w]` edge per line.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Feature matrix, binary or text. Random features are drawn when absent.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Width of random features.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Seed of random features.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct TimelineInput {
    #[command(flatten)]
    graph: GraphInput,
    /// Event stream, `t op u v [w]` per line.
    #[arg(long, conflicts_with = "snapshots")]
    events: Option<PathBuf>,
    /// Directory of snapshot files, taken in lexicographic order.
    #[arg(long)]
    snapshots: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModeArgs {
    /// Apply and push every event on its own instead of per timestamp.
    #[arg(long, conflicts_with = "lazy")]
    eager: bool,
    /// Apply events one by one but push only at checkpoints.
    #[arg(long)]
    lazy: bool,
    /// Checkpoint every k-th timestamp or snapshot.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// Binary, 64-bit values.
    Bin,
    /// Binary, 32-bit values.
    Bin32,
    /// Tab-separated text.
    Tsv,
}

#[derive(Args, Debug)]
struct PropagateArgs {
    #[command(flatten)]
    input: TimelineInput,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// Output directory; one file per filter, plus `concat` for both.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct StreamArgs {
    #[command(flatten)]
    graph: GraphInput,
    /// Event stream file, or `-` for standard input.
    #[arg(long)]
    events: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
    /// Number of checkpoints spread over the stream.
    #[arg(long, default_value_t = 10)]
    checkpoints: usize,
    /// Push after every event instead of at checkpoints only.
    #[arg(long)]
    eager: bool,
    /// Output directory; nothing is written when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    input: TimelineInput,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// Compare against the exact power series instead of a fresh
    /// propagation (small graphs only).
    #[arg(long)]
    against_oracle: bool,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Embedding file written by `propagate` or `stream`.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
    format: FormatArg,
    /// Write consecutive differences instead of the embeddings.
    #[arg(long)]
    deltas: bool,
}

#[derive(Args, Debug)]
struct DiffArgs {
    from: PathBuf,
    to: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
