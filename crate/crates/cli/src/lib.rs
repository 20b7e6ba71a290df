//! Command-line harness for the `acmmd` crate: dataset ingestion, estimates
//! and tests on JSON-lines data, simulation sweeps on the synthetic model,
//! and report emission.

pub mod config;
pub mod dataset;
pub mod run;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Flags, Mode};

#[derive(Debug, Parser)]
#[command(name = "acmmd", version, about = "Conditional goodness-of-fit and reliability tests for sequence models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate ACMMD² on a dataset of (x, y, y_model) triplets.
    Estimate(Flags),
    /// Test whether the model conditional matches the data conditional.
    Test(Flags),
    /// Estimate the reliability ACMMD² on records with model samples.
    RelEstimate(Flags),
    /// Test whether the model is reliable.
    RelTest(Flags),
    /// Rejection rates over a grid of sample sizes and perturbations (or
    /// dataset groups).
    Sweep(Flags),
    /// Write a synthetic dataset.
    ToyGenerate(Flags),
    /// Closed-form population values of the synthetic model.
    ToyExact(Flags),
}

impl Command {
    fn parts(&self) -> (Mode, &Flags) {
        match self {
            Command::Estimate(f) => (Mode::Estimate, f),
            Command::Test(f) => (Mode::Test, f),
            Command::RelEstimate(f) => (Mode::RelEstimate, f),
            Command::RelTest(f) => (Mode::RelTest, f),
            Command::Sweep(f) => (Mode::Sweep, f),
            Command::ToyGenerate(f) => (Mode::ToyGenerate, f),
            Command::ToyExact(f) => (Mode::ToyExact, f),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 for usage or configuration errors, 2 for data errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (mode, flags) = cli.command.parts();
    let config = match ExperimentConfig::resolve(mode, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run::run(mode, &config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
