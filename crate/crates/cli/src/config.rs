//! `--config` files: one `key=value` per line, `#` comments. Keys are flag
//! names without the leading dashes (`max-iters` or `max_iters`). The file's
//! settings are spliced in before the command-line flags, which therefore
//! win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, CommandFactory};
use gpcr::{Error, Result};

use crate::args::Cli;

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Turn file contents into flags for `subcommand`.
pub fn config_flags(subcommand: &str, text: &str) -> Result<Vec<OsString>> {
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(subcommand)
        .ok_or_else(|| Error::input(format!("unknown subcommand \"{subcommand}\"")))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::input(format!("config line {}: expected key=value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(Error::input("config files cannot include other config files"));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::input(format!("config line {}: unknown key \"{key}\"", i + 1)))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => out.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => {
                    return Err(Error::input(format!(
                        "config line {}: \"{key}\" takes true or false, got \"{other}\"",
                        i + 1
                    )))
                }
            }
        } else {
            out.push(OsString::from(format!("--{key}")));
            out.push(OsString::from(value));
        }
    }
    Ok(out)
}

/// Splice config-file flags in right after the subcommand name.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    let pos = args
        .iter()
        .position(|a| names.iter().any(|n| a.to_string_lossy() == n.as_str()))
        .ok_or_else(|| Error::input("--config needs a subcommand"))?;
    let sub = args[pos].to_string_lossy().to_string();
    let flags = config_flags(&sub, &text)?;
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
