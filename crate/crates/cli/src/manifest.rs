//! Per-command run directory bookkeeping.
//!
//! Every command writes into one directory and finishes by writing
//! `manifest.json`: tool version, command line, config hash, hashed inputs
//! and outputs, seed and timestamps. A failed command still leaves a manifest,
//! marked `failed`, next to whatever it had written.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use proglab_core::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub status: String,
    pub error: Option<String>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub upstream_config_hashes: Vec<String>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(proglab_core::textio::sha256_hex(&bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn read_manifest(dir: &Path) -> Option<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Collects what a command reads and writes.
pub struct Run {
    pub dir: PathBuf,
    command: String,
    args: Vec<String>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    upstream: Vec<String>,
    inputs: Vec<FileEntry>,
    outputs: Vec<PathBuf>,
    started: u64,
}

impl Run {
    pub fn new(dir: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
        Ok(Run {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            seed: None,
            config_hash: None,
            upstream: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
        })
    }

    /// Hash an input file and pick up the config hash of the run that made it.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Io {
                path: path.into(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            });
        }
        let sha256 = file_sha256(path)?;
        self.inputs.push(FileEntry { path: path.display().to_string(), sha256 });
        if let Some(h) = path.parent().and_then(read_manifest).and_then(|m| m.config_hash) {
            if !self.upstream.contains(&h) {
                self.upstream.push(h);
            }
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write a file inside the run directory and record it.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        self.record(p.clone());
        Ok(p)
    }

    /// Record a file written by other code.
    pub fn record(&mut self, path: PathBuf) {
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
    }

    /// Write the manifest, marking the run failed if `outcome` is an error.
    pub fn finish(self, outcome: &Result<()>) -> Result<()> {
        let mut outputs = Vec::new();
        for p in &self.outputs {
            if p.is_file() {
                let rel = p.strip_prefix(&self.dir).unwrap_or(p).display().to_string();
                outputs.push(FileEntry { path: rel, sha256: file_sha256(p)? });
            }
        }
        let m = RunManifest {
            tool: "proglab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            args: self.args,
            status: if outcome.is_ok() { "ok".into() } else { "failed".into() },
            error: outcome.as_ref().err().map(|e| e.to_string()),
            seed: self.seed,
            config_hash: self.config_hash,
            upstream_config_hashes: self.upstream,
            inputs: self.inputs,
            outputs,
            started_unix: self.started,
            finished_unix: now(),
        };
        let p = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })
    }
}
