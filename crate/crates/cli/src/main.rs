//! `lbwork`: run sparse kernels under a named schedule, build and execute
//! Stream-K GEMM plans, evaluate the grid-size model and fit its constants.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lbwork::engine::ExecMode;
use lbwork::formats::SynthSpec;
use lbwork::model::TieBreak;
use lbwork::schedules::ScheduleId;
use lbwork::streamk::{parse_triple, PlanKindId};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "lbwork", version, about = "Load-balancing workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sparse matrix-vector product `y = A x`.
    Spmv(SparseArgs),
    /// Sparse times dense, `C = A B`.
    Spmm {
        #[command(flatten)]
        sparse: SparseArgs,
        /// Columns of the random dense operand.
        #[arg(long, default_value_t = 8)]
        cols: usize,
    },
    /// Single-source shortest paths; edge weights are `|a_ij|`.
    Sssp {
        #[command(flatten)]
        sparse: SparseArgs,
        #[arg(long, default_value_t = 0)]
        source: usize,
    },
    /// Execute a GEMM plan on random operands.
    Gemm {
        #[command(flatten)]
        gemm: GemmArgs,
        #[command(flatten)]
        exec: ExecArgs,
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print a GEMM plan without executing it.
    Plan {
        #[command(flatten)]
        gemm: GemmArgs,
        #[arg(long, env = "LBWORK_WORKERS")]
        workers: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Tabulate the Stream-K model over grid sizes.
    Model(ModelArgs),
    /// Fit model constants to measured or recorded samples.
    Fit(FitArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct MatrixArgs {
    /// Matrix Market file.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Synthetic matrix, `uniform:RxC[:k]` or `powerlaw:RxC[:exponent,max_degree]`.
    #[arg(long, value_name = "DIST:RxC[:PARAMS]")]
    synth: Option<SynthSpec>,
}

#[derive(Args)]
struct SparseArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Schedule id, or `auto` for the size heuristic.
    #[arg(long, default_value = "auto")]
    schedule: ScheduleChoice,
    /// Schedule workers; defaults to the hardware worker count.
    #[arg(long)]
    g: Option<usize>,
    #[arg(long, default_value_t = 32)]
    group_size: usize,
    #[command(flatten)]
    exec: ExecArgs,
    /// Compare against the sequential oracle; exit 3 on mismatch.
    #[arg(long)]
    verify: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ExecArgs {
    /// Hardware workers; defaults to the available parallelism.
    #[arg(long, env = "LBWORK_WORKERS")]
    workers: Option<usize>,
    #[arg(long, default_value = "phased")]
    mode: ExecMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GemmArgs {
    #[arg(long, value_name = "MxNxK", value_parser = triple)]
    shape: [usize; 3],
    #[arg(long, value_name = "BMxBNxBK", value_parser = triple, default_value = "128x128x32")]
    blk: [usize; 3],
    #[arg(long, default_value = "stream_k")]
    kind: PlanKindId,
    /// Grid size for `stream_k`; defaults to the worker count.
    #[arg(long)]
    g: Option<usize>,
    /// Splits per tile for `fixed_split`.
    #[arg(long, default_value_t = 2)]
    split: usize,
}

#[derive(Args)]
struct OutputArgs {
    /// Report path; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_name = "MxNxK", value_parser = triple)]
    shape: [usize; 3],
    #[arg(long, value_name = "BMxBNxBK", value_parser = triple, default_value = "128x128x32")]
    blk: [usize; 3],
    /// Evaluate a single grid size instead of `1..=workers`.
    #[arg(long)]
    g: Option<usize>,
    #[arg(long, env = "LBWORK_WORKERS")]
    workers: Option<usize>,
    /// Constants `a,b,c,d`.
    #[arg(long, value_name = "A,B,C,D", value_parser = four, conflicts_with = "params_file")]
    params: Option<[f64; 4]>,
    /// Parameter store written by `fit --store`.
    #[arg(long, value_name = "PATH")]
    params_file: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    machine: String,
    #[arg(long, value_enum, default_value_t = Tie::Larger)]
    tie: Tie,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with columns m,n,k,blk_m,blk_n,blk_k,g,time. Without it, samples
    /// are measured on `--shape` for grid sizes `1..=g`.
    #[arg(long, value_name = "PATH", conflicts_with = "shape")]
    samples: Option<PathBuf>,
    #[arg(long, value_name = "MxNxK", value_parser = triple, required_unless_present = "samples")]
    shape: Option<[usize; 3]>,
    #[arg(long, value_name = "BMxBNxBK", value_parser = triple, default_value = "128x128x32")]
    blk: [usize; 3],
    /// Largest measured grid size; defaults to four times the tile count.
    #[arg(long)]
    g: Option<usize>,
    #[command(flatten)]
    exec: ExecArgs,
    /// Parameter store to update.
    #[arg(long, value_name = "PATH")]
    store: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    machine: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Tie {
    Larger,
    Smaller,
}

impl From<Tie> for TieBreak {
    fn from(t: Tie) -> Self {
        match t {
            Tie::Larger => TieBreak::Larger,
            Tie::Smaller => TieBreak::Smaller,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScheduleChoice {
    Auto,
    Fixed(ScheduleId),
}

impl FromStr for ScheduleChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(ScheduleChoice::Auto);
        }
        s.parse().map(ScheduleChoice::Fixed).map_err(|e| format!("{e}"))
    }
}

fn triple(s: &str) -> Result<[usize; 3], String> {
    parse_triple(s).map_err(|e| e.to_string())
}

fn four(s: &str) -> Result<[f64; 4], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number")))
        .collect::<Result<_, _>>()?;
    vals.try_into().map_err(|v: Vec<f64>| format!("expected 4 values, got {}", v.len()))
}

/// Failure modes, mapped to distinct exit codes.
enum Failure {
    Error(String),
    Mismatch(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Mismatch(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}
