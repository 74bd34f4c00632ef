//! Output directories: every file written through [`Artifacts`] is hashed
//! and listed in the directory's `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{self, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub subcommand: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub wall_clock_secs: f64,
    pub files: Vec<FileEntry>,
}

pub fn version() -> &'static str {
    option_env!("MORL_GIT_DESCRIBE").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION")))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A single-writer output directory.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
    started: Instant,
}

impl Artifacts {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, files: Vec::new(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let bytes = bytes.as_ref();
        if rel == MANIFEST_FILE || self.files.iter().any(|f| f.path == rel) {
            bail!("{rel} written twice into {}", self.dir.display());
        }
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry { path: rel.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes the config and the manifest.
    pub fn finish(mut self, subcommand: &str, cfg: &RunConfig, seeds: Vec<u64>) -> Result<RunManifest> {
        self.write(CONFIG_FILE, cfg.to_toml()?)?;
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA,
            subcommand: subcommand.to_string(),
            version: version().to_string(),
            config_hash: cfg.hash()?,
            seeds,
            output_dir: self.dir.display().to_string(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            files: self.files,
        };
        std::fs::write(self.dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checked: usize,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
    pub config_hash_ok: bool,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.config_hash_ok && self.mismatched.is_empty() && self.missing.is_empty()
    }
}

/// Re-hashes every listed file and recomputes the config hash.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let manifest = read_manifest(dir)?;
    let mut report = VerifyReport::default();
    for f in &manifest.files {
        match std::fs::read(dir.join(&f.path)) {
            Ok(bytes) => {
                report.checked += 1;
                if sha256_hex(&bytes) != f.sha256 {
                    report.mismatched.push(f.path.clone());
                }
            }
            Err(_) => report.missing.push(f.path.clone()),
        }
    }
    report.config_hash_ok = match std::fs::read_to_string(dir.join(CONFIG_FILE)) {
        Ok(text) => config::parse(&text).and_then(|c| c.hash()).map(|h| h == manifest.config_hash).unwrap_or(false),
        Err(_) => false,
    };
    Ok(report)
}
