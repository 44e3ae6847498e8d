//! Flat `key=value` config files that pre-populate command-line flags.
//!
//! Config entries are spliced in right after the subcommand tokens, ahead of
//! the explicit flags. Every option overrides itself, so an explicit flag
//! given later on the line wins.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;

use crate::error::{CliError, CliResult};

pub fn parse_config(text: &str, origin: &Path) -> CliResult<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Data(format!("{}:{}: expected key=value", origin.display(), k + 1))
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Data(format!("{}:{}: empty key", origin.display(), k + 1)));
        }
        entries.push((key, value.trim().to_string()));
    }
    Ok(entries)
}

/// Removes `--config PATH` / `--config=PATH` from `args`, returning the path.
fn take_config_path(args: &mut Vec<OsString>) -> CliResult<Option<OsString>> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--" {
            break;
        }
        if a == "--config" {
            if i + 1 >= args.len() {
                return Err(CliError::Usage("--config needs a file path".into()));
            }
            found = Some(args.remove(i + 1));
            args.remove(i);
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            found = Some(OsString::from(p));
            args.remove(i);
            continue;
        }
        i += 1;
    }
    Ok(found)
}

/// Expands an optional config file into flags for the selected subcommand.
pub fn expand_args(cmd: &Command, mut args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = take_config_path(&mut args)? else {
        return Ok(args);
    };
    let path = Path::new(&path).to_path_buf();
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::file(&path, e))?;
    let entries = parse_config(&text, &path)?;

    // Walk the subcommand chain to find where flags start.
    let mut sub = cmd;
    let mut at = 1;
    while at < args.len() {
        let name = args[at].to_string_lossy().into_owned();
        match sub.find_subcommand(&name) {
            Some(s) => {
                sub = s;
                at += 1;
            }
            None => break,
        }
    }

    let mut injected = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| {
                CliError::Usage(format!("{}: unknown option '{key}' for this command", path.display()))
            })?;
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{key}")));
            injected.push(OsString::from(value));
        } else {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "{}: option '{key}' is a switch, got '{other}'",
                        path.display()
                    )))
                }
            }
        }
    }
    args.splice(at..at, injected);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let e = parse_config("# c\n\nn_mean = 5\n--seed=3\n", Path::new("x")).unwrap();
        assert_eq!(e, vec![("n-mean".into(), "5".into()), ("seed".into(), "3".into())]);
        assert!(parse_config("novalue\n", Path::new("x")).is_err());
    }

    #[test]
    fn strips_config_flag() {
        let mut a: Vec<OsString> = ["raresir", "simulate", "--config=c.cfg", "--seed", "1"]
            .iter()
            .map(OsString::from)
            .collect();
        assert_eq!(take_config_path(&mut a).unwrap(), Some(OsString::from("c.cfg")));
        assert_eq!(a.len(), 4);
    }
}
