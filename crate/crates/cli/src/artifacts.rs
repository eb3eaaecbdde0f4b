//! Output directory: CSV/JSON results, resolved config and manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Collects the files written by one run.
pub struct OutputDir {
    root: PathBuf,
    files: BTreeSet<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), files: BTreeSet::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes a CSV with the given header; each row is rendered field by field.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_resolved_config(&mut self, cfg: &ExperimentConfig) -> Result<()> {
        self.write_json(RESOLVED_CONFIG, cfg)
    }

    /// Writes `manifest.json` with version, seed provenance and file digests.
    pub fn write_manifest(&mut self, cfg: &ExperimentConfig, seed_source: &str, status: &str) -> Result<()> {
        let mut files = Vec::new();
        for name in &self.files {
            let bytes = fs::read(self.path(name)).with_context(|| format!("hashing {name}"))?;
            files.push(ManifestFile { path: name.clone(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        }
        let manifest = Manifest {
            program: "phi4",
            version: env!("CARGO_PKG_VERSION"),
            core_version: phi4_core::VERSION,
            subcommand: cfg.subcommand.map(|s| s.name()).unwrap_or_default(),
            status,
            config_sha256: sha256_hex(cfg.fingerprint().as_bytes()),
            rng: RngProvenance {
                seed: cfg.seed.unwrap_or_default(),
                seed_source,
                generator: "ChaCha8, key from (seed, level), stream per time slice; sub-experiment seeds by SplitMix64 mixing",
            },
            threads: cfg.threads.unwrap_or(1),
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.path(MANIFEST);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'a str,
    version: &'a str,
    core_version: &'a str,
    subcommand: &'a str,
    status: &'a str,
    config_sha256: String,
    rng: RngProvenance<'a>,
    threads: usize,
    files: Vec<ManifestFile>,
}

#[derive(Serialize)]
struct RngProvenance<'a> {
    seed: u64,
    seed_source: &'a str,
    generator: &'a str,
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    bytes: u64,
    sha256: String,
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
