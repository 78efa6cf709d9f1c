//! Command-line entry point wiring the pipeline stages together.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
//! failure.

mod colormap;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use radar_distill::Error;

#[derive(Parser)]
#[command(
    name = "radar-distill",
    about = "FMCW radar simulation, classical-chain pseudo-labeling, and distillation into a learnable module",
    version
)]
struct Cli {
    /// Worker threads for scene-parallel stages (default: available
    /// cores). The RADAR_DISTILL_WORKERS environment variable overrides
    /// this flag.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AoaArg {
    Fft,
    Music,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    ExactDft,
    PerturbedDft,
    RandomDoppler,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum CollapseArg {
    Sum,
    Max,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a scene dataset: ADC cubes plus a JSON-lines manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Snap targets to bin centers with pairwise separation (toy
        /// separable data for head training).
        #[arg(long)]
        separable: bool,
        #[arg(long, default_value_t = 1)]
        min_targets: usize,
        #[arg(long, default_value_t = 4)]
        max_targets: usize,
    },
    /// Pseudo-label a dataset with teacher RAD tensors.
    Teacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = AoaArg::Fft)]
        aoa: AoaArg,
        #[arg(long)]
        out: PathBuf,
        /// Mean-pool the RAD tensors by these per-axis factors, e.g. 2,2,1.
        #[arg(long, value_delimiter = ',')]
        downsample: Option<Vec<usize>>,
    },
    /// Distill the teacher into the learnable module.
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        init_seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        eval_every: Option<u64>,
        #[arg(long)]
        train_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a final (resumable) checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the initialization ablation: one distillation per scheme.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated scheme list.
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        schemes: Vec<SchemeArg>,
        /// Gammas for the perturbed-dft entries of --schemes.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against the teacher labels of a dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Skip the configuration digest checks.
        #[arg(long)]
        force: bool,
    },
    /// Run the classical CFAR + angle chain over a dataset.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Measure forward-pass latency and throughput of a checkpoint.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a tensor as a PPM heatmap.
    Plot {
        #[arg(long)]
        tensor: PathBuf,
        /// Axis to collapse for 3-d tensors.
        #[arg(long, default_value_t = 1)]
        axis: usize,
        #[arg(long, value_enum, default_value_t = CollapseArg::Sum)]
        axis_collapse: CollapseArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_of(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 2,
        Error::Format { .. } | Error::Io { .. } | Error::Config(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let workers = std::env::var("RADAR_DISTILL_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .or(cli.workers);
    if let Some(n) = workers {
        // Worker count changes wall time only; results are ordered
        // reductions and do not depend on it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_of(&err))
        }
    }
}
