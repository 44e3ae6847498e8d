//! Key=value run manifests written next to every output.

use std::fmt::Display;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use clap::ArgMatches;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Argument groups; they echo member names rather than values.
const GROUPS: [&str; 2] = ["tail_count", "replicates"];

pub struct RunManifest {
    command: String,
    started: DateTime<Utc>,
    entries: Vec<(String, String)>,
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::file(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::file(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, matches: &ArgMatches) -> Self {
        let mut m = RunManifest {
            command: command.to_string(),
            started: Utc::now(),
            entries: Vec::new(),
        };
        let mut ids: Vec<_> = matches.ids().map(|id| id.as_str().to_string()).collect();
        ids.sort();
        for id in ids {
            if GROUPS.contains(&id.as_str()) {
                continue;
            }
            if let Ok(Some(raw)) = matches.try_get_raw(&id) {
                let v: Vec<String> = raw.map(|s| s.to_string_lossy().into_owned()).collect();
                if !v.is_empty() {
                    m.set(format!("param.{id}"), v.join(";"));
                }
            }
        }
        m
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let digest = file_digest(path)?;
        self.set(format!("input.{}.sha256", path.display()), digest);
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("command={}\n", self.command));
        out.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out.push_str(&format!(
            "started={}\n",
            self.started.to_rfc3339_opts(SecondsFormat::Millis, true)
        ));
        out.push_str(&format!(
            "finished={}\n",
            Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
        ));
        out
    }

    /// Writes `<output>.manifest`.
    pub fn write_for(&self, output: &Path) -> CliResult<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest");
        let path = PathBuf::from(name);
        std::fs::write(&path, self.render()).map_err(|e| CliError::file(&path, e))?;
        Ok(path)
    }
}
