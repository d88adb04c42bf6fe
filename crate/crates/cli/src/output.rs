//! Staged outputs and the run manifest. Nothing touches the output directory
//! until a command has finished computing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gpcr::data::write_atomic;
use gpcr::{Error, Result};
use serde::Serialize;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: Vec<String>,
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<OutputEntry>,
    /// `null` marks a metric that could not be computed (e.g. no truth
    /// columns).
    pub metrics: BTreeMap<String, Option<f64>>,
    pub notes: Vec<String>,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub notes: Vec<String>,
}

impl Staged {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics
            .insert(key.into(), value.is_finite().then_some(value));
    }

    pub fn absent(&mut self, key: impl Into<String>) {
        self.metrics.insert(key.into(), None);
    }

    /// Write every staged file, then the manifest listing them.
    pub fn commit(self, out: &Path, mut manifest: Manifest) -> Result<PathBuf> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (name, bytes) in &self.files {
            write_atomic(&out.join(name), bytes)?;
            manifest.outputs.push(OutputEntry {
                file: name.clone(),
                bytes: bytes.len(),
            });
        }
        manifest.metrics = self.metrics;
        manifest.notes = self.notes;
        manifest.finished_unix = now_unix();
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Parse(format!("manifest serialization: {e}")))?;
        let path = out.join(MANIFEST);
        write_atomic(&path, format!("{json}\n").as_bytes())?;
        Ok(path)
    }
}

/// CSV text from a header and rows of already formatted cells.
pub fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn num(v: f64) -> String {
    gpcr::data::format_exact(v)
}
