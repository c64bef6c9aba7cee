//! Run manifest written next to every set of artifacts.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: u64,
    /// Hash of the subcommand, seed, scenario bytes and every input file.
    pub config_hash: String,
    pub inputs: Vec<Entry>,
    pub artifacts: Vec<Entry>,
}

#[derive(Debug, Serialize)]
pub struct Entry {
    pub name: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(subcommand: &'static str, seed: u64) -> Self {
        Self {
            tool: "platewave",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config_hash: String::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.push(Entry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn input_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.input(name, &bytes);
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(dir, name)
    }

    /// Records a file some other writer already produced.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).with_context(|| format!("reading back {}", path.display()))?;
        self.artifacts.push(Entry {
            name: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        let mut h = Sha256::new();
        h.update(format!("{};{};", self.subcommand, self.seed));
        for e in &self.inputs {
            h.update(format!("{}={};", e.name, e.sha256));
        }
        self.config_hash = hex::encode(h.finalize());
        let text = toml::to_string(&self).context("serializing manifest")?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
