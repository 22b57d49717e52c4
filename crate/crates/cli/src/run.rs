//! Run directories: `<out>/<command>-<UTC timestamp>-<config hash>`, holding
//! the resolved config, the outputs and a manifest with their checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct RunDir {
    path: PathBuf,
    command: String,
    config_hash: String,
    started: DateTime<Utc>,
    outputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    artifact_version: &'a str,
    config_sha256: &'a str,
    started_at: String,
    finished_at: String,
    status: &'a str,
    outputs: &'a BTreeMap<String, String>,
}

impl RunDir {
    /// Creates a fresh directory and writes the resolved config into it.
    /// Existing directories are never reused.
    pub fn create(out: &Path, command: &str, resolved_config: &str) -> Result<Self, CliError> {
        let started = Utc::now();
        let config_hash = sha256_hex(resolved_config.as_bytes());
        fs::create_dir_all(out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
        let stem = format!(
            "{command}-{}-{}",
            started.format("%Y%m%dT%H%M%S%.3fZ"),
            &config_hash[..8]
        );
        let mut path = out.join(&stem);
        let mut k = 1;
        loop {
            match fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    k += 1;
                    path = out.join(format!("{stem}-{k}"));
                }
                Err(e) => {
                    return Err(CliError::Runtime(format!(
                        "cannot create {}: {e}",
                        path.display()
                    )))
                }
            }
        }
        let mut run = Self {
            path,
            command: command.to_string(),
            config_hash,
            started,
            outputs: BTreeMap::new(),
        };
        run.write(RESOLVED_CONFIG, resolved_config.as_bytes())?;
        Ok(run)
    }

    /// Writes `bytes` to `rel` (parents created) and records its checksum.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path.join(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", target.display())))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut s =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    pub fn finish(self, status: &str) -> Result<PathBuf, CliError> {
        let stamp = |t: DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let manifest = Manifest {
            command: &self.command,
            artifact_version: env!("CARGO_PKG_VERSION"),
            config_sha256: &self.config_hash,
            started_at: stamp(self.started),
            finished_at: stamp(Utc::now()),
            status,
            outputs: &self.outputs,
        };
        let mut s = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        s.push('\n');
        fs::write(self.path.join(MANIFEST), s)?;
        Ok(self.path)
    }
}

/// Minimal CSV writer; floats use Rust's shortest round-trip formatting.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Self { buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

/// Binary state dump: `n` as little-endian `u64`, then the `n²` complex
/// coefficients row-major as little-endian `(re, im)` `f64` pairs.
pub fn state_bytes(state: &sns_core::spectral::SpectralField) -> Vec<u8> {
    let n = state.grid().n() as u64;
    let mut out = Vec::with_capacity(8 + 16 * state.coeffs().len());
    out.extend_from_slice(&n.to_le_bytes());
    for c in state.coeffs() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}
