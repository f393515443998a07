//! Optional TOML configuration.
//!
//! ```toml
//! [score]
//! scorer = "euclidean"
//! mode = "literal-para-len"
//!
//! [train-boundary]
//! seed = 7
//! out-dir = "runs/boundary"
//! ```
//!
//! Keys are long flag names (`out_dir` is accepted for `out-dir`). Config
//! values are spliced into the argument list right after the subcommand,
//! skipping any flag the user already passed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory};
use toml::{Table, Value};

use crate::args::{Cli, SUBCOMMANDS};
use crate::error::CliError;

fn config_error(path: &Path, message: impl std::fmt::Display) -> CliError {
    CliError::usage("config", format!("{}: {message}", path.display()))
}

fn scalar(path: &Path, key: &str, value: &Value) -> Result<String, CliError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(config_error(
            path,
            format!("key '{key}' must be a string, number or boolean"),
        )),
    }
}

fn user_passed(raw: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("{flag}=");
    raw.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == flag || a.starts_with(&prefix))
}

/// Arguments implied by the `[subcommand]` table of the config file.
pub fn config_args(
    path: &Path,
    subcommand: &str,
    raw: &[OsString],
) -> Result<Vec<OsString>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: Table = text.parse().map_err(|e| config_error(path, e))?;
    for (key, value) in &doc {
        if !value.is_table() {
            return Err(config_error(
                path,
                format!("top-level key '{key}' must be a [subcommand] table"),
            ));
        }
    }
    let Some(section) = doc.get(subcommand).and_then(Value::as_table) else {
        return Ok(Vec::new());
    };

    let command = Cli::command();
    let sub = command
        .find_subcommand(subcommand)
        .expect("subcommand name comes from the parsed command");
    let mut out: Vec<OsString> = Vec::new();
    for (key, value) in section {
        let long = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && long != "config")
            .ok_or_else(|| config_error(path, format!("[{subcommand}] has no option '{key}'")))?;
        if user_passed(raw, &long) {
            continue;
        }
        let flag = OsString::from(format!("--{long}"));
        match (arg.get_action(), value) {
            (ArgAction::SetTrue, Value::Boolean(true)) => out.push(flag),
            (ArgAction::SetTrue, Value::Boolean(false)) => {}
            (ArgAction::SetTrue, _) => {
                return Err(config_error(path, format!("key '{key}' must be a boolean")));
            }
            (_, Value::Array(items)) => {
                for item in items {
                    out.push(flag.clone());
                    out.push(scalar(path, key, item)?.into());
                }
            }
            (_, v) => {
                out.push(flag);
                out.push(scalar(path, key, v)?.into());
            }
        }
    }
    Ok(out)
}

/// Finds the `--config` path and the subcommand name in raw arguments.
pub fn locate(raw: &[OsString]) -> (Option<PathBuf>, Option<&'static str>) {
    let mut path = None;
    let mut name = None;
    let mut iter = raw.iter().skip(1);
    while let Some(arg) = iter.next() {
        let Some(text) = arg.to_str() else { continue };
        if text == "--config" {
            path = iter.next().map(PathBuf::from);
        } else if let Some(p) = text.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if name.is_none() {
            name = SUBCOMMANDS.iter().copied().find(|n| *n == text);
        }
    }
    (path, name)
}

/// Inserts `extra` right after the first occurrence of the subcommand name.
pub fn splice(raw: &[OsString], subcommand: &str, extra: Vec<OsString>) -> Vec<OsString> {
    let pos = raw
        .iter()
        .enumerate()
        .skip(1)
        .position(|(i, a)| a == subcommand && raw[i - 1] != "--config")
        .map(|p| p + 1)
        .unwrap_or(raw.len() - 1);
    let mut merged = raw[..=pos].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&raw[pos + 1..]);
    merged
}
