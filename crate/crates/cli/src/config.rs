//! `--config` files: JSON objects whose keys supply flag defaults.
//!
//! Top-level `seed` and `threads` feed the global flags; an object under a
//! subcommand's name feeds that subcommand. Config values are inserted in
//! front of the command-line flags, so explicit flags win.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;
use serde_json::{Map, Value};

use crate::CliError;

const GLOBAL_KEYS: [&str; 2] = ["seed", "threads"];

fn flag_value(key: &str, v: &Value) -> Result<Option<String>, CliError> {
    Ok(match v {
        Value::Bool(true) => None,
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => {
            let parts = items
                .iter()
                .map(|i| match i {
                    Value::Number(n) => Ok(n.to_string()),
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(CliError::Usage(format!("config key `{key}`: list items must be numbers or strings"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(parts.join(","))
        }
        _ => return Err(CliError::Usage(format!("config key `{key}`: unsupported value {v}"))),
    })
}

fn push_flag(out: &mut Vec<OsString>, key: &str, v: &Value) -> Result<(), CliError> {
    if v == &Value::Bool(false) {
        return Ok(());
    }
    out.push(format!("--{}", key.replace('_', "-")).into());
    if let Some(s) = flag_value(key, v)? {
        out.push(s.into());
    }
    Ok(())
}

fn long_names(cmd: &Command) -> Vec<String> {
    cmd.get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

pub fn read_config(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("config {} must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("config {}: {e}", path.display()))),
    }
}

/// Position of the `--config` value in `args`, if any.
pub fn find_config(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Rewrites `args` with the config's flags inserted ahead of the explicit ones.
pub fn inject(args: Vec<OsString>, config: &Map<String, Value>, cli: &Command) -> Result<Vec<OsString>, CliError> {
    let sub_names: Vec<&str> = cli.get_subcommands().map(|c| c.get_name()).collect();
    for key in config.keys() {
        if !GLOBAL_KEYS.contains(&key.as_str()) && !sub_names.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
    }
    let sub_pos = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| sub_names.contains(&a.to_string_lossy().as_ref()))
        .map(|(i, _)| i);

    let mut global = Vec::new();
    for key in GLOBAL_KEYS {
        if let Some(v) = config.get(key) {
            push_flag(&mut global, key, v)?;
        }
    }
    let mut local = Vec::new();
    if let Some(pos) = sub_pos {
        let name = args[pos].to_string_lossy().to_string();
        if let Some(section) = config.get(&name) {
            let Value::Object(section) = section else {
                return Err(CliError::Usage(format!("config key `{name}` must be an object")));
            };
            let sub = cli.find_subcommand(&name).expect("subcommand exists");
            let known = long_names(sub);
            for (key, v) in section {
                let long = key.replace('_', "-");
                if !known.contains(&long) || GLOBAL_KEYS.contains(&long.as_str()) || long == "config" {
                    return Err(CliError::Usage(format!("unknown config key `{name}.{key}`")));
                }
                push_flag(&mut local, key, v)?;
            }
        }
    }

    let mut out = Vec::with_capacity(args.len() + global.len() + local.len());
    let mut args = args.into_iter();
    out.extend(args.next());
    out.extend(global);
    match sub_pos {
        Some(pos) => {
            out.extend(args.by_ref().take(pos));
            out.extend(local);
            out.extend(args);
        }
        None => out.extend(args),
    }
    Ok(out)
}
