//! Flat `key=value` config files: merging under command-line flags and
//! echoing the effective configuration of a run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};
use serde::Serialize;

pub const ECHO_FILE: &str = "config.txt";

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {line:?}", n + 1);
        };
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

fn given_on_command_line(m: &ArgMatches, id: &str) -> bool {
    m.try_contains_id(id).unwrap_or(false) && m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Appends every config entry that was not given as a flag, so flags take
/// precedence over the file and the file over built-in defaults.
pub fn merge_args(
    command: Command,
    argv: Vec<OsString>,
    config: &BTreeMap<String, String>,
) -> Result<Vec<OsString>> {
    let matches = command
        .clone()
        .ignore_errors(true)
        .try_get_matches_from(&argv)?;
    let Some((sub_name, sub_matches)) = matches.subcommand() else {
        return Ok(argv);
    };
    let sub = command
        .find_subcommand(sub_name)
        .expect("matched subcommand exists");
    let mut extra = Vec::new();
    for (key, value) in config {
        if key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(command.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .with_context(|| format!("unknown config key {key:?} for `{sub_name}`"))?;
        let id = arg.get_id().as_str();
        if given_on_command_line(sub_matches, id) || given_on_command_line(&matches, id) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => extra.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => bail!("config key {key:?} expects true or false, got {other:?}"),
            },
            _ => extra.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    let mut out = argv;
    out.extend(extra);
    Ok(out)
}

fn scalar(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(items) => Some(
            items
                .iter()
                .filter_map(scalar)
                .collect::<Vec<_>>()
                .join(","),
        ),
        other => Some(other.to_string()),
    }
}

/// Renders global and command settings as a replayable config file.
pub fn echo(command: &str, global: &impl Serialize, args: &impl Serialize) -> Result<String> {
    let mut text = format!("# ipts {command}\n");
    for part in [serde_json::to_value(global)?, serde_json::to_value(args)?] {
        let serde_json::Value::Object(map) = part else {
            bail!("config echo expects a struct");
        };
        for (k, v) in map {
            if let Some(v) = scalar(&v) {
                text.push_str(&format!("{k}={v}\n"));
            }
        }
    }
    Ok(text)
}

pub fn write_echo(dir: &Path, text: &str) -> Result<()> {
    let path = dir.join(ECHO_FILE);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
