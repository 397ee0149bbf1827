//! `metaband`: run meta-learned bandit experiments and write their CSVs.
//!
//! Exit codes: 0 success, 1 failed `check`, 2 bad flags or configuration,
//! 3 data or runtime errors.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::Flags;

#[derive(Debug, Parser)]
#[command(name = "metaband", version, about = "Meta-learned projected LinUCB/TS experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run policies on the synthetic low-rank task population.
    Synth(Flags),
    /// Run policies on MovieLens-1M users.
    Movielens(Flags),
    /// Total regret as a function of q = rank(P̂⊥).
    RankSweep(Flags),
    /// Relative W error of the learned and full-bias projections per task.
    WError(Flags),
    /// Run the numerical self-checks and report pass/fail.
    Check(Flags),
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Check,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check => 1,
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl From<metaband::Error> for Failure {
    fn from(e: metaband::Error) -> Self {
        use metaband::Error::*;
        match e {
            InvalidConfig(_) | RankOutOfRange { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Synth(f) => commands::synth(f, &argv),
        Command::Movielens(f) => commands::movielens(f, &argv),
        Command::RankSweep(f) => commands::rank_sweep(f, &argv),
        Command::WError(f) => commands::w_error(f, &argv),
        Command::Check(f) => commands::check(f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Data(m) => eprintln!("error: {m}"),
                Failure::Check => eprintln!("self-check failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
