//! Command-line front end: argument definitions, the commands, and the JSON
//! report envelope.

pub mod args;
pub mod commands;
pub mod error;
pub mod report;

use args::{Cli, Command};
use commands::Outcome;
use error::CliError;

/// Sizes the global worker pool. Must run before any parallel work.
pub fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    match threads {
        None => Ok(()),
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string())),
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Generate(a) => commands::cmd_generate(a),
        Command::Test(a) => commands::cmd_test(a),
        Command::LowerBound(a) => commands::cmd_lower_bound(a),
        Command::Plan(a) => commands::cmd_plan(a),
        Command::Verdict(a) => commands::cmd_verdict(a),
    }
}
