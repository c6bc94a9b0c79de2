use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Provenance of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub version: String,
}

/// SHA-256 of the config's compact JSON. Object keys serialize sorted, so
/// the hash does not depend on field order or platform.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self { command, started: Instant::now(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    /// Writes the manifest to `path` through a temporary file and a rename.
    pub fn finish(self, path: &Path, config: serde_json::Value, seed: Option<u64>) -> Result<RunManifest> {
        let show = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect();
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config_hash: config_hash(&config),
            config,
            seed,
            inputs: show(&self.inputs),
            outputs: show(&self.outputs),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            version: VERSION.to_string(),
        };
        write_atomic(path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// `<path>.run.json`, next to a file output.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
