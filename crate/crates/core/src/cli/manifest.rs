//! Run manifest written next to every artifact.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::checkpoint::FORMAT_VERSION as CHECKPOINT_VERSION;
use super::config::LoadedConfig;
use crate::error::{Error, Result};
use crate::eval::ExperimentConfig;
use crate::sim::log::LOG_FORMAT_VERSION;

pub const MANIFEST_FORMAT: &str = "dear-run-manifest v1";

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_source: Option<String>,
    pub config_digest: String,
    pub config_overrides: Vec<String>,
    pub seeds: Vec<u64>,
    pub package_version: &'static str,
    pub log_format_version: u32,
    pub checkpoint_format_version: u32,
    pub started_unix_secs: u64,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, cfg: &LoadedConfig, seeds: Vec<u64>, started: SystemTime, wall: Duration) -> Self {
        Self {
            format: MANIFEST_FORMAT,
            command: command.to_string(),
            args,
            config_source: cfg.source.as_ref().map(|p| p.display().to_string()),
            config_digest: cfg.digest.clone(),
            config_overrides: cfg.overridden.clone(),
            seeds,
            package_version: env!("CARGO_PKG_VERSION"),
            log_format_version: LOG_FORMAT_VERSION,
            checkpoint_format_version: CHECKPOINT_VERSION,
            started_unix_secs: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_secs: wall.as_secs_f64(),
            outputs: Vec::new(),
            config: cfg.config.clone(),
        }
    }

    pub fn with_output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Writes `<artifact>.manifest.toml` and returns its path.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf> {
        let path = manifest_path(artifact);
        let text = toml::to_string(self).map_err(|e| Error::Data(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.toml");
    artifact.with_file_name(name)
}
