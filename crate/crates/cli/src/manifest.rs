//! Run manifests: one JSON file per command invocation, never overwritten.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::common::file_sha256;
use crate::CliError;

/// `git describe`-style identifier captured at build time.
pub const BUILD_ID: &str = env!("TREEATTN_BUILD_ID");

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input file role to hex SHA-256.
    pub checksums: BTreeMap<String, String>,
    pub build_id: String,
    pub wall_clock_secs: f64,
    pub metrics: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            checksums: BTreeMap::new(),
            build_id: BUILD_ID.to_string(),
            wall_clock_secs: 0.0,
            metrics: serde_json::Value::Null,
        }
    }

    pub fn checksum(&mut self, role: &str, path: Option<&Path>) -> Result<(), CliError> {
        if let Some(p) = path {
            self.checksums.insert(role.to_string(), file_sha256(p)?);
        }
        Ok(())
    }

    /// Writes `manifest-<command>-<n>.json` in `dir` with the first unused
    /// `n`; existing manifests are never touched.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let body = serde_json::to_string_pretty(self)?;
        for n in 0.. {
            let path = dir.join(format!("manifest-{}-{n}.json", self.command));
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(body.as_bytes())?;
                    f.write_all(b"\n")?;
                    return Ok(path);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(CliError::Data(format!("{}: {e}", path.display()))),
            }
        }
        unreachable!("unbounded search")
    }
}
