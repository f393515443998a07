//! Command-line front end for `pairprobe`.
//!
//! Every subcommand prints a JSON summary on stdout. Failures print a
//! one-line JSON error record on stderr and exit with 2 (usage or config),
//! 3 (data mismatch) or 4 (I/O).

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

pub use args::{BuildArgs, Cli, Command, CompareArgs, ReportArgs, ScoreArgs, TrainBoundaryArgs};
pub use commands::{cmd_build, cmd_compare, cmd_report, cmd_score, cmd_train_boundary};
pub use error::{CliError, ErrorClass};

/// What a successful invocation produced.
pub enum Outcome {
    /// `--help` or `--version` text, already printed.
    Printed,
    Summary(serde_json::Value),
}

fn clap_error(e: clap::Error) -> Result<Outcome, CliError> {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            Ok(Outcome::Printed)
        }
        _ => {
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            Err(CliError::usage(
                "usage",
                first.trim_start_matches("error: ").to_string(),
            ))
        }
    }
}

/// Parses arguments, merging the optional `--config` file. The config
/// path and subcommand are located before clap runs, so required flags may
/// come from the file.
pub fn parse<I, T>(args: I) -> Result<Result<Cli, clap::Error>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (path, name) = config::locate(&raw);
    if let (Some(path), Some(name)) = (path, name) {
        let extra = config::config_args(&path, name, &raw)?;
        return Ok(Cli::try_parse_from(config::splice(&raw, name, extra)));
    }
    Ok(Cli::try_parse_from(&raw))
}

fn summary<S: Serialize>(s: S) -> Result<Outcome, CliError> {
    Ok(Outcome::Summary(
        serde_json::to_value(s).expect("summary serializes"),
    ))
}

pub fn run<I, T>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse(args)? {
        Ok(cli) => cli,
        Err(e) => return clap_error(e),
    };
    match &cli.command {
        Command::Build(a) => summary(cmd_build(a)?),
        Command::Score(a) => summary(cmd_score(a)?),
        Command::TrainBoundary(a) => summary(cmd_train_boundary(a)?),
        Command::Compare(a) => summary(cmd_compare(a)?),
        Command::Report(a) => summary(cmd_report(a)?),
    }
}
