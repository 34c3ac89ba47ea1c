use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use silence_denoise::metrics::MetricMeans;

/// A bad flag, path or configuration; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Resolved settings of one command, written to `run.json` in its run
/// directory before any work starts.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub seed: u64,
    pub data_root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub phases: Vec<String>,
    pub systems: Vec<String>,
    pub metrics: Vec<String>,
    pub snr_buckets: Vec<f64>,
    pub out_dir: PathBuf,
    pub settings: serde_json::Value,
    pub version: String,
}

impl ExperimentConfig {
    pub fn new(command: &str, out_dir: &Path, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            data_root: None,
            manifest: None,
            checkpoints: Vec::new(),
            phases: Vec::new(),
            systems: Vec::new(),
            metrics: Vec::new(),
            snr_buckets: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            settings: serde_json::Value::Null,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Fails with a usage error when a referenced input is missing.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = self.data_root.iter().chain(&self.manifest).chain(&self.checkpoints);
        for p in inputs {
            if !p.exists() {
                return Err(usage(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        write_json(&self.out_dir.join("run.json"), self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub const METRIC_COLUMNS: [&str; 7] = ["clips", "pesq", "ssnr", "stoi", "csig", "cbak", "covl"];

pub fn metric_cells(m: &MetricMeans) -> Vec<String> {
    std::iter::once(m.clips.to_string()).chain(m.named().iter().map(|(_, v)| cell(*v))).collect()
}

pub fn header<'a>(leading: &[&'a str]) -> Vec<&'a str> {
    leading.iter().copied().chain(METRIC_COLUMNS).collect()
}
