//! Command-line front end for `mixmiss-core`: CSV and JSON I/O, flag and
//! config-file handling, and the subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};

/// Runs one parsed command and returns the summary line for stdout.
pub fn run(command: &Command) -> CliResult<String> {
    match command {
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Init(a) => commands::cmd_init(a),
        Command::Fit(a) => commands::cmd_fit(a),
        Command::Predict(a) => commands::cmd_predict(a),
        Command::ErrorRate(a) => commands::cmd_error_rate(a),
        Command::Study1(a) => commands::cmd_study1(a),
        Command::Study2(a) => commands::cmd_study2(a),
    }
}
