//! Output directory handling and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub arguments: Vec<String>,
    /// SHA-256 of the canonical JSON of the parsed options.
    pub config_hash: String,
    /// SHA-256 of each input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub tool_version: String,
    pub seed: u64,
    pub exit_code: u8,
    pub wall_time_seconds: f64,
    /// Files written to the output directory.
    pub outputs: Vec<String>,
}

/// Collects outputs of one command run.
pub struct Run {
    dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let config_json = serde_json::to_vec(config).context("serializing options")?;
        Ok(Run {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_hash: sha256_hex(&config_json),
            seed,
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<String> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).context("serializing output")?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish(mut self, exit_code: u8) -> Result<()> {
        let manifest = Manifest {
            command: self.command.clone(),
            arguments: std::env::args().skip(1).collect(),
            config_hash: self.config_hash.clone(),
            input_hashes: std::mem::take(&mut self.inputs),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            exit_code,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(())
    }
}
