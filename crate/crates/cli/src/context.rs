//! Per-invocation state: artifact bookkeeping, warnings and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cordon_core::report::{write_atomic, CsvTable};

use crate::config::RunConfig;
use crate::failure::Failure;

pub const MANIFEST_NAME: &str = "run_manifest.json";

pub struct RunContext {
    pub cfg: RunConfig,
    pub command: String,
    config_path: Option<PathBuf>,
    artifacts: Vec<Artifact>,
    warnings: Vec<String>,
    started: DateTime<Utc>,
    clock: Instant,
}

#[derive(Debug, Clone, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'a str,
    status: &'a str,
    config_path: Option<String>,
    config_hash: String,
    seed: u64,
    workers: usize,
    started_at: String,
    finished_at: String,
    wall_time_s: f64,
    artifacts: &'a [Artifact],
    warnings: &'a [String],
    error: Option<&'a Failure>,
}

impl RunContext {
    pub fn new(cfg: RunConfig, command: &str, config_path: Option<&Path>) -> Self {
        RunContext {
            cfg,
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            artifacts: Vec::new(),
            warnings: Vec::new(),
            started: Utc::now(),
            clock: Instant::now(),
        }
    }

    pub fn output_dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    /// Records a warning for the manifest and logs it.
    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// Writes `<stage>_<table>.csv` under the output directory.
    pub fn write_table(&mut self, stage: &str, table: &str, csv: &CsvTable) -> Result<PathBuf, Failure> {
        let path = self.output_dir().join(format!("{stage}_{table}.csv"));
        self.write_bytes(&path, &csv.to_bytes())?;
        Ok(path)
    }

    /// Writes any file atomically and records it as an artifact.
    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(path, bytes)?;
        self.record(path, bytes);
        Ok(())
    }

    pub fn record(&mut self, path: &Path, bytes: &[u8]) {
        let shown = path
            .strip_prefix(self.output_dir())
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.artifacts.push(Artifact {
            path: shown,
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
    }

    /// Writes `run_manifest.json`; `error` marks a failed run.
    pub fn finish(&self, error: Option<&Failure>) -> Result<(), Failure> {
        let finished = Utc::now();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: cordon_core::VERSION,
            command: &self.command,
            status: if error.is_some() { "error" } else { "ok" },
            config_path: self.config_path.as_ref().map(|p| p.display().to_string()),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            workers: rayon::current_num_threads(),
            started_at: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: finished.to_rfc3339_opts(SecondsFormat::Millis, true),
            wall_time_s: self.clock.elapsed().as_secs_f64(),
            artifacts: &self.artifacts,
            warnings: &self.warnings,
            error,
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.output_dir().join(MANIFEST_NAME), &bytes)?;
        Ok(())
    }
}
