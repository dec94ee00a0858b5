//! Batch command-line harness for the uqkit toolkit.
//!
//! Every subcommand is deterministic given `--seed` and its flags, and the
//! output does not depend on the number of worker threads.

mod aso_sim;
mod conformal_eval;
mod datastore_cmd;
mod dirichlet_check;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "uqkit",
    version,
    about = "Uncertainty quantification experiments"
)]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "UQKIT_THREADS")]
    threads: Option<usize>,
    /// Also write an SVG chart to this path.
    #[arg(long, global = true)]
    plot: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Type I / Type II error-rate grids as CSV.
    AsoSim(aso_sim::AsoSimArgs),
    /// Coverage study of split and kNN-weighted conformal generation as JSON.
    ConformalEval(conformal_eval::ConformalEvalArgs),
    /// Closed-form Dirichlet quantities against Monte Carlo as JSON.
    DirichletCheck(dirichlet_check::DirichletCheckArgs),
    /// Inspect and convert UQDS datastore files.
    Datastore(datastore_cmd::DatastoreArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let output = cli.output.as_deref();
    let plot = cli.plot.as_deref();
    match &cli.command {
        Command::AsoSim(args) => aso_sim::run(args, cli.seed, output, plot),
        Command::ConformalEval(args) => conformal_eval::run(args, cli.seed, output, plot),
        Command::DirichletCheck(args) => dirichlet_check::run(args, cli.seed, output, plot),
        Command::Datastore(args) => datastore_cmd::run(args, output),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uqkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
