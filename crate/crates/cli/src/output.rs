//! Output sinks and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

/// A directory, or standard output when the target is `-`.
///
/// On standard output only the primary JSON document is written; side files
/// and the manifest are skipped.
pub enum Sink {
    Dir(PathBuf),
    Stdout,
}

impl Sink {
    pub fn new(target: &str) -> Result<Self> {
        if target == "-" {
            return Ok(Sink::Stdout);
        }
        let dir = PathBuf::from(target);
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Sink::Dir(dir))
    }

    pub fn dir(&self) -> Option<&Path> {
        match self {
            Sink::Dir(d) => Some(d),
            Sink::Stdout => None,
        }
    }

    pub fn primary<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        match self {
            Sink::Dir(d) => write_file(&d.join(name), text.as_bytes()),
            Sink::Stdout => {
                let mut out = std::io::stdout().lock();
                writeln!(out, "{text}")?;
                Ok(())
            }
        }
    }

    /// Writes a side file through `f`; a no-op on standard output.
    pub fn side(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        if let Sink::Dir(d) = self {
            let mut buf = Vec::new();
            f(&mut buf)?;
            write_file(&d.join(name), &buf)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Wraps a JSON document with the schema version.
pub fn versioned<T: Serialize>(kind: &str, body: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(body)?;
    let header = serde_json::json!({ "schema_version": SCHEMA_VERSION, "kind": kind });
    match &mut v {
        serde_json::Value::Object(map) => {
            let mut out = header.as_object().cloned().unwrap_or_default();
            out.extend(std::mem::take(map));
            Ok(serde_json::Value::Object(out))
        }
        _ => Ok(serde_json::json!({ "schema_version": SCHEMA_VERSION, "kind": kind, "data": v })),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

pub struct ManifestBuilder {
    subcommand: String,
    started: Instant,
    inputs: BTreeMap<String, String>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn finish<C: Serialize>(self, sink: &Sink, config: &C, seed: Option<u64>) -> Result<()> {
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            subcommand: self.subcommand,
            config: serde_json::to_value(config)?,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        match sink.dir() {
            Some(d) => write_file(&d.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes()),
            None => {
                log::info!("manifest: {}", serde_json::to_string(&manifest)?);
                Ok(())
            }
        }
    }
}
