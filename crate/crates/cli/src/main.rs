//! Command-line runner binding data ingestion, network training, doubly
//! robust estimation, policy search, and the Monte Carlo harness into
//! reproducible runs.
//!
//! Every failure prints one machine-parsable line to stderr,
//! `error: <class>: <message>`, and exits with a class-specific code:
//! 2 for configuration problems, 3 for data problems, 4 for numeric
//! failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deepinfer::Error;

use crate::config::Settings;

#[derive(Parser)]
#[command(
    name = "deepinfer",
    version,
    about = "Deep-network nuisance training and doubly robust causal inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every artifact-producing command. Each overrides the
/// matching config-file key.
#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replication count for simulate and placebo.
    #[arg(long, value_name = "N")]
    reps: Option<usize>,
    /// Treat assignment as randomized: the propensity is the sample
    /// treatment frequency.
    #[arg(long)]
    randomized: bool,
    /// Propensity clip bound in (0, 0.5).
    #[arg(long, value_name = "X")]
    clip_eps: Option<f64>,
    /// Per-conversion profit margin.
    #[arg(long, value_name = "M")]
    margin: Option<f64>,
    /// Per-treatment cost.
    #[arg(long, value_name = "C")]
    cost: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit networks on a CSV dataset and save the model files.
    Train(CommonArgs),
    /// Estimate the average treatment effect with a confidence interval.
    Ate(CommonArgs),
    /// Expected profit of a cutoff policy and its edge over a baseline.
    Profit(CommonArgs),
    /// Effect of treatment on the treated subpopulation.
    Tot(CommonArgs),
    /// Decompose the treated/control outcome gap.
    Decomp(CommonArgs),
    /// Evaluate a cutoff grid and select the most profitable policy.
    Policy(CommonArgs),
    /// Run a Monte Carlo coverage study on a synthetic design.
    Simulate(CommonArgs),
    /// Run a placebo study: fake treatment on control rows only.
    Placebo(CommonArgs),
    /// Suggest network width and depth from sample size and smoothness.
    Advise {
        /// Settings as key=value: n, d, beta (required), width_scale,
        /// depth_scale (optional).
        #[arg(value_name = "KEY=VALUE")]
        pairs: Vec<String>,
    },
}

/// CLI failure: either a library error or a problem with the run
/// configuration itself.
pub enum CliError {
    Config(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    /// The error class named in the stderr line.
    fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Lib(e) => match e {
                Error::Architecture(_) | Error::Config(_) | Error::Dimension(_) => "config",
                Error::Data(_) | Error::EmptyArm { .. } | Error::Format(_) | Error::Io(_) => {
                    "data"
                }
                Error::Domain(_) | Error::Degenerate(_) | Error::NonFiniteLoss { .. } => {
                    "numeric"
                }
            },
        }
    }

    fn exit_code(&self) -> u8 {
        match self.class() {
            "config" => 2,
            "data" => 3,
            _ => 4,
        }
    }

    /// Single-line rendering for stderr.
    fn message(&self) -> String {
        let text = match self {
            CliError::Config(msg) => msg.clone(),
            CliError::Lib(e) => e.to_string(),
        };
        text.replace('\n', "; ")
    }
}

fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => commands::train(&Settings::resolve("train", args)?),
        Command::Ate(args) => commands::ate_cmd(&Settings::resolve("ate", args)?),
        Command::Profit(args) => commands::profit_cmd(&Settings::resolve("profit", args)?),
        Command::Tot(args) => commands::tot_cmd(&Settings::resolve("tot", args)?),
        Command::Decomp(args) => commands::decomp_cmd(&Settings::resolve("decomp", args)?),
        Command::Policy(args) => commands::policy_cmd(&Settings::resolve("policy", args)?),
        Command::Simulate(args) => commands::simulate(&Settings::resolve("simulate", args)?),
        Command::Placebo(args) => commands::placebo(&Settings::resolve("placebo", args)?),
        Command::Advise { pairs } => commands::advise(pairs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.class(), e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
