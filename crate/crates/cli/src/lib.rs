//! `pathsim`: generate ground truth, train, simulate and evaluate.
//!
//! Exit codes: 0 success, 1 runtime error, 2 validation error, 3 failed
//! verification gate.

mod commands;
pub mod config;
pub mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{gradcheck_suite, EvalArgs, GenArgs, GradcheckArgs, SimulateArgs, TrainArgs, GRADCHECK_GATE};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_GATE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "pathsim", version, about = "Learned network path simulator")]
pub struct Cli {
    /// Worker threads for generation, training, simulation and evaluation (default: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML config with one table per command, or a manifest.json from an earlier run; flags win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overwrite existing output files
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a ground-truth dataset
    Gen(GenArgs),
    /// Train an RBU model or an LSTM baseline
    Train(TrainArgs),
    /// Run closed-loop simulations against a trained model
    Simulate(SimulateArgs),
    /// Compare two datasets
    Eval(EvalArgs),
    /// Finite-difference check of the training gradients
    Gradcheck(GradcheckArgs),
}

/// Bad input: flags, config files or data.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// A verification gate was not met.
#[derive(Debug)]
pub struct GateFailed(pub String);

impl fmt::Display for GateFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for GateFailed {}

#[derive(Debug)]
pub struct Failure {
    pub error: anyhow::Error,
    pub code: i32,
}

pub struct Context {
    pub config: Option<PathBuf>,
    pub force: bool,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let fail = |error: anyhow::Error| Failure { code: exit_code(&error), error };
    if cli.jobs == Some(0) {
        return Err(fail(Invalid("--jobs must be at least 1".into()).into()));
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build().map_err(|e| fail(e.into()))?;
    let ctx = Context { config: cli.config, force: cli.force };
    pool.install(|| match &cli.command {
        Command::Gen(a) => commands::gen(a, &ctx),
        Command::Train(a) => commands::train(a, &ctx),
        Command::Simulate(a) => commands::simulate(a, &ctx),
        Command::Eval(a) => commands::eval(a, &ctx),
        Command::Gradcheck(a) => commands::gradcheck(a, &ctx),
    })
    .map_err(fail)
}

/// Maps an error chain to an exit code.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.is::<GateFailed>() {
            return EXIT_GATE;
        }
        if cause.is::<Invalid>() {
            return EXIT_VALIDATION;
        }
        if let Some(m) = cause.downcast_ref::<pathsim_model::Error>() {
            use pathsim_model::Error as M;
            match m {
                M::InvalidConfig(_)
                | M::Bounds { .. }
                | M::NonPositiveBuffer { .. }
                | M::EmptyDataset
                | M::ShortTrace(_)
                | M::TooFewTraces { .. }
                | M::Checkpoint(_)
                | M::Json(_) => return EXIT_VALIDATION,
                _ => {}
            }
        }
        if let Some(c) = cause.downcast_ref::<pathsim_core::Error>() {
            use pathsim_core::Error as C;
            match c {
                C::InvalidConfig(_)
                | C::InvalidScenario(_)
                | C::InvalidTrace(_)
                | C::EmptyTrace
                | C::EmptyInput(_)
                | C::Malformed { .. }
                | C::Version { .. }
                | C::Json(_) => return EXIT_VALIDATION,
                _ => {}
            }
        }
    }
    EXIT_RUNTIME
}
