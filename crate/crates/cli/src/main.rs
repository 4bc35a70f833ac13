//! `affine-fold` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.

mod commands;
mod pin;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use affine_fold::Error;

#[derive(Parser)]
#[command(name = "affine-fold", version, about = "Build, train, collapse and time skip-connected linear CNNs")]
struct Cli {
    /// Worker threads for data-parallel work [default: RAYON_NUM_THREADS, else 1].
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded preset network.
    Build(BuildArgs),
    /// Train a network with a per-epoch skip-strength schedule.
    Train(TrainArgs),
    /// Collapse a linear network to one affine map.
    Collapse(CollapseArgs),
    /// Remove zero-weight skips from a network.
    Excise(CollapseArgs),
    /// Predict classes for MNIST test images or seeded random inputs.
    Predict(PredictArgs),
    /// Time single predictions of one or more models.
    BenchPredict(BenchArgs),
    /// Mean validation accuracy over a grid of fixed skip strengths.
    SweepT(SweepArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump one of a layer's matrices as `row col value` triplets.
    ExportMatrix(ExportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the MNIST IDX files.
    #[arg(long, env = "AFFINE_FOLD_DATA", default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Training subset size.
    #[arg(long, default_value_t = 10_000)]
    subset: usize,
    /// Validation subset size, drawn from the test split.
    #[arg(long, default_value_t = 2_000)]
    val_subset: usize,
    /// Subset seed; the validation subset uses this plus one.
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

#[derive(Args)]
struct SgdArgs {
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct BuildArgs {
    /// basic3, basic6, mnist_classifier, deep_linear or deep_linear(L).
    #[arg(long)]
    preset: String,
    /// Conv layer count for deep_linear.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Strength given to every declared skip.
    #[arg(long)]
    skip_t: Option<f64>,
    /// Output path stem; writes `<out>.manifest` and `<out>.blob`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sgd: SgdArgs,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Comma-separated t per epoch, or decay0.9 / decay0.5.
    #[arg(long, default_value = "decay0.9")]
    schedule: String,
    #[arg(long)]
    out: PathBuf,
    /// History CSV path; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Drop zero-weight skips from the trained network.
    #[arg(long)]
    excise: bool,
}

#[derive(Args)]
pub struct CollapseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Predict on this many seeded random inputs instead of MNIST.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "AFFINE_FOLD_DATA", default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Only the first N test images.
    #[arg(long)]
    limit: Option<usize>,
    /// CSV of `index,class[,label]`; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Model stems; the first is the speedup baseline.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long, default_value_t = affine_fold::bench::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = affine_fold::bench::DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time batches of this size and report per-image time.
    #[arg(long)]
    batch: Option<usize>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave the process on whatever cores the OS picks.
    #[arg(long)]
    no_pin: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sgd: SgdArgs,
    /// Comma-separated t values.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    grid: String,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also draw accuracy against t as an SVG line chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Perturb one analytic gradient entry before comparing.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Layer index, 1-based.
    #[arg(long)]
    layer: usize,
    /// weight, pad, operator or resample.
    #[arg(long, default_value = "weight")]
    part: String,
    /// Skip source for `--part resample`.
    #[arg(long)]
    from: Option<usize>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error raised when a command ran but its check did not pass.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Range(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // read by the rayon pool on first use
        Some(n) => std::env::set_var("RAYON_NUM_THREADS", n.to_string()),
        None if std::env::var_os("RAYON_NUM_THREADS").is_none() => std::env::set_var("RAYON_NUM_THREADS", "1"),
        None => {}
    }
    let result = match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Train(a) => commands::train(a),
        Command::Collapse(a) => commands::collapse(a),
        Command::Excise(a) => commands::excise(a),
        Command::Predict(a) => commands::predict(a),
        Command::BenchPredict(a) => commands::bench_predict(a),
        Command::SweepT(a) => commands::sweep_t(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ExportMatrix(a) => commands::export_matrix(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
