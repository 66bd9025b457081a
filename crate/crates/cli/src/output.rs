// SPDX-License-Identifier: MIT OR Apache-2.0

//! Output plumbing: versioned tab-separated tables and run manifests.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Table schema version written in every header line.
pub const SCHEMA_VERSION: u32 = 1;

/// A tab-separated table whose first line is `# schema: neurofunc.<name> v1`
/// and whose second line names the columns.
pub struct Table {
    path: PathBuf,
    out: BufWriter<File>,
    columns: usize,
}

impl Table {
    pub fn create(path: &Path, name: &str, columns: &[String]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# schema: neurofunc.{name} v{SCHEMA_VERSION}")?;
        writeln!(out, "{}", columns.join("\t"))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            columns: columns.len(),
        })
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        anyhow::ensure!(
            cells.len() == self.columns,
            "{}: row has {} cells, header has {}",
            self.path.display(),
            cells.len(),
            self.columns
        );
        writeln!(self.out, "{}", cells.join("\t"))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

pub fn columns(names: impl IntoIterator<Item = impl Into<String>>) -> Vec<String> {
    names.into_iter().map(Into::into).collect()
}

pub fn num(v: f64) -> String {
    format!("{v:.9}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "nan".into())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub parameters: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub results: Value,
}

/// Collects the details of one command run and writes them next to the
/// produced artifacts as `run_manifest.<label>.json`.
pub struct RunRecorder {
    command: String,
    started: Instant,
    parameters: Value,
    seed: Option<u64>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    results: Value,
}

impl RunRecorder {
    pub fn new(command: &str, parameters: impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            started: Instant::now(),
            parameters: serde_json::to_value(parameters)?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: Value::Null,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn results(&mut self, results: impl Serialize) -> Result<()> {
        self.results = serde_json::to_value(results)?;
        Ok(())
    }

    pub fn write(self, dir: &Path, label: &str) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            parameters: self.parameters,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
            results: self.results,
        };
        let path = dir.join(format!("run_manifest.{label}.json"));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
        Ok(path)
    }
}

/// Directory that holds `path`, for single-file outputs.
pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
