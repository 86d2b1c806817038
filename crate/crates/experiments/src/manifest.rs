//! Output directories and their manifests.
//!
//! Every JSON artifact carries the spec hash at its top level; every other
//! artifact has a JSON sidecar with the same stem. `spec.toml`, when present,
//! hashes to the manifest's spec hash.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use zk_core::snapshot::write_snapshot;
use zk_core::RealField;

use crate::error::{io_err, ExperimentError, Result};
use crate::spec::ExperimentSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPEC_FILE: &str = "spec.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub kind: String,
    pub spec_hash: String,
    pub code_version: String,
    pub created_unix: u64,
    pub wall_clock_s: f64,
    pub files: Vec<FileEntry>,
    pub summary: Value,
    /// Error that stopped the run, if any; outputs up to it are kept.
    pub failure: Option<String>,
}

/// SHA-256 of a JSON-serializable config, hex encoded.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(config).expect("config serializes")))
}

fn file_entry(dir: &Path, rel: &str) -> Result<FileEntry> {
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    Ok(FileEntry {
        path: rel.to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Collects the files of one output directory.
pub struct Artifacts {
    dir: PathBuf,
    name: String,
    kind: String,
    spec_hash: String,
    files: Vec<String>,
    started: Instant,
}

impl Artifacts {
    pub fn create(dir: &Path, name: &str, kind: &str, spec_hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            name: name.to_string(),
            kind: kind.to_string(),
            spec_hash: spec_hash.to_string(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(())
    }

    pub fn spec(&mut self, spec: &ExperimentSpec) -> Result<()> {
        self.write(SPEC_FILE, spec.to_toml().as_bytes())
    }

    /// Writes `value` as `<name>`, with `spec_hash` added at the top level.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        match &mut v {
            Value::Object(map) => {
                map.insert("spec_hash".into(), Value::String(self.spec_hash.clone()));
            }
            other => {
                v = json!({ "spec_hash": self.spec_hash, "value": other.take() });
            }
        }
        let text = serde_json::to_string_pretty(&v)?;
        self.write(name, text.as_bytes())
    }

    /// Writes `<stem>.csv` and its `<stem>.json` sidecar listing the columns
    /// next to `meta`.
    pub fn table(&mut self, stem: &str, csv: &str, meta: Value) -> Result<()> {
        let columns: Vec<&str> = csv.lines().next().unwrap_or("").split(',').collect();
        self.write(&format!("{stem}.csv"), csv.as_bytes())?;
        self.json(
            &format!("{stem}.json"),
            &json!({ "columns": columns, "rows": csv.lines().count().saturating_sub(1), "meta": meta }),
        )
    }

    /// Writes a binary field snapshot `<stem>.zkf` and its sidecar.
    pub fn snapshot(&mut self, stem: &str, field: &RealField, t: f64) -> Result<()> {
        let rel = format!("{stem}.zkf");
        write_snapshot(&self.dir.join(&rel), field)?;
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
        let g = field.grid();
        self.json(
            &format!("{stem}.json"),
            &json!({ "t": t, "nx": g.nx(), "ny": g.ny(), "lx": g.lx(), "ly": g.ly() }),
        )
    }

    /// Hashes every file and writes `manifest.json`.
    pub fn finish<S: Serialize>(self, summary: &S, failure: Option<String>) -> Result<RunManifest> {
        let files = self
            .files
            .iter()
            .map(|rel| file_entry(&self.dir, rel))
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            name: self.name,
            kind: self.kind,
            spec_hash: self.spec_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            files,
            summary: serde_json::to_value(summary)?,
            failure,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that every listed file exists with the recorded hash and
    /// carries the spec hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mismatch = |m: String| Err(ExperimentError::Config(format!("manifest check failed: {m}")));
        for entry in &self.files {
            let now = file_entry(dir, &entry.path)?;
            if now != *entry {
                return mismatch(format!("{} changed since the run", entry.path));
            }
            let path = dir.join(&entry.path);
            if entry.path == SPEC_FILE {
                if ExperimentSpec::load(&path)?.hash() != self.spec_hash {
                    return mismatch(format!("{} does not hash to {}", entry.path, self.spec_hash));
                }
                continue;
            }
            let json_path = if entry.path.ends_with(".json") {
                path
            } else {
                path.with_extension("json")
            };
            let text = std::fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
            let v: Value = serde_json::from_str(&text)?;
            if v.get("spec_hash").and_then(Value::as_str) != Some(self.spec_hash.as_str()) {
                return mismatch(format!("{} does not carry the spec hash", entry.path));
            }
        }
        Ok(())
    }
}
