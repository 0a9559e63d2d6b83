//! `--config` files: one `key = value` per line, keys are long flag names.
//!
//! Each key becomes a flag appended to the command line unless the user
//! already gave that flag, so the command line always wins. Repeatable flags
//! such as `--scale` are taken wholesale from one source or the other.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use clap::parser::ValueSource;
use clap::{ArgAction, CommandFactory, FromArgMatches, Parser};

use crate::Cli;

#[derive(Debug)]
pub enum ParseError {
    Clap(clap::Error),
    Config(anyhow::Error),
}

impl From<clap::Error> for ParseError {
    fn from(e: clap::Error) -> Self {
        ParseError::Clap(e)
    }
}

pub fn parse_args(argv: Vec<OsString>) -> Result<Cli, ParseError> {
    let mut cmd = Cli::command();
    let matches = cmd.try_get_matches_from_mut(&argv)?;
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(Cli::from_arg_matches(&matches)?);
    };
    let Some(path) = sub.get_one::<std::path::PathBuf>("config") else {
        return Ok(Cli::from_arg_matches(&matches)?);
    };
    let entries = read_entries(path).map_err(ParseError::Config)?;

    cmd.build();
    let sub_cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
    let mut extra: Vec<OsString> = Vec::new();
    for (line, key, value) in entries {
        let long = key.replace('_', "-");
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()))
            .filter(|a| !matches!(a.get_id().as_str(), "config" | "help" | "version"))
            .ok_or_else(|| {
                ParseError::Config(anyhow!(
                    "{}:{line}: '{key}' is not an option of `{name}`",
                    path.display()
                ))
            })?;
        if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => {
                let on: bool = value.parse().map_err(|_| {
                    ParseError::Config(anyhow!(
                        "{}:{line}: '{key}' expects true or false",
                        path.display()
                    ))
                })?;
                if on {
                    extra.push(format!("--{long}").into());
                }
            }
            _ => extra.push(format!("--{long}={value}").into()),
        }
    }
    let mut full = argv;
    full.extend(extra);
    Ok(Cli::try_parse_from(full)?)
}

/// `(line number, key, value)` for every non-blank, non-comment line.
fn read_entries(path: &Path) -> anyhow::Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`", path.display(), i + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            bail!("{}:{}: missing key", path.display(), i + 1);
        }
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.push((i + 1, key.to_string(), value.to_string()));
    }
    Ok(out)
}
