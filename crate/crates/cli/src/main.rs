//! Command-line surface: dataset generation, training, prediction,
//! evaluation, and the scaling benchmark.
//!
//! Exit codes: 0 ok, 2 usage/invalid parameters, 3 training aborted
//! (partial checkpoint retained), 4 grid/data mismatch.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[global_allocator]
static ALLOCATOR: logos_gpo::memtrack::CountingAllocator =
    logos_gpo::memtrack::CountingAllocator;

#[derive(Parser)]
#[command(name = "logos", version, about = "Sparse Gaussian process operator learning for PDE surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a PDE dataset (burgers | advection) and write it as a binary file
    Generate {
        /// problem tag: burgers or advection
        #[arg(long)]
        problem: String,
        /// number of samples
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// grid resolution (power of two)
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// viscosity (burgers) or advection speed
        #[arg(long)]
        nu: Option<f64>,
        /// final time of the solution map
        #[arg(long)]
        t_final: Option<f64>,
        /// time steps for the burgers solver
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset file
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; missing fields fall back to per-problem defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// output checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// history CSV path (defaults to <out>.history.csv)
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        neighbors: Option<usize>,
        #[arg(long)]
        inducing: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        modes: Option<usize>,
        /// write zeros in the wall_seconds/peak_bytes history columns
        #[arg(long, default_value_t = false)]
        zero_timings: bool,
    },
    /// Posterior prediction for every sample of a dataset file
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// predictions file (dataset format, outputs = posterior means)
        #[arg(long)]
        out: PathBuf,
        /// optional second file with outputs = marginal variances
        #[arg(long)]
        variance_out: Option<PathBuf>,
        /// add observation noise to the variances
        #[arg(long, default_value_t = true)]
        include_noise: bool,
    },
    /// Relative-L2 and coverage metrics of a checkpoint on a dataset
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scaling study: train/evaluate over a grid×samples matrix, one CSV row per cell
    Bench {
        #[arg(long)]
        problem: String,
        /// comma-separated grid sizes
        #[arg(long, value_delimiter = ',')]
        grids: Vec<usize>,
        /// comma-separated training-set sizes
        #[arg(long, value_delimiter = ',', default_value = "128")]
        n_train: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        n_test: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("LOGOS_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(e) = logos_gpo::exec::configure_threads(n) {
                    eprintln!("warning: could not cap threads: {e}");
                }
            }
            _ => {
                eprintln!("error: LOGOS_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Generate { problem, n, grid, seed, nu, t_final, steps, out } => {
            commands::generate(&problem, n, grid, seed, nu, t_final, steps, &out)
        }
        Command::Train {
            data,
            config,
            out,
            history,
            seed,
            epochs,
            batch_size,
            learning_rate,
            neighbors,
            inducing,
            width,
            levels,
            modes,
            zero_timings,
        } => commands::train(commands::TrainArgs {
            data,
            config,
            out,
            history,
            seed,
            epochs,
            batch_size,
            learning_rate,
            neighbors,
            inducing,
            width,
            levels,
            modes,
            zero_timings,
        }),
        Command::Predict { checkpoint, data, out, variance_out, include_noise } => {
            commands::predict(&checkpoint, &data, &out, variance_out.as_deref(), include_noise)
        }
        Command::Evaluate { checkpoint, data, out } => {
            commands::evaluate(&checkpoint, &data, &out)
        }
        Command::Bench { problem, grids, n_train, n_test, epochs, seed, config, out } => {
            commands::bench(&problem, &grids, &n_train, n_test, epochs, seed, config.as_deref(), &out)
        }
    };
    ExitCode::from(code)
}
