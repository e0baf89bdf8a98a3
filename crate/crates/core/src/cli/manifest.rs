use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{ExperimentConfig, CONFIG_VERSION};
use crate::error::Result;

/// Run record written next to every command's output.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub config_format: String,
    pub seed: Option<u64>,
    pub seeds: Vec<u64>,
    pub crate_version: String,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_time_secs: f64,
}

pub(crate) struct ManifestBuilder {
    manifest: Manifest,
    start: Instant,
}

impl ManifestBuilder {
    pub(crate) fn new(command: &str, config_path: &Path, config: &ExperimentConfig) -> Self {
        Self {
            manifest: Manifest {
                command: command.to_string(),
                config_path: config_path.display().to_string(),
                config_sha256: config.hash(),
                config_format: format!("toml v{CONFIG_VERSION}"),
                seed: None,
                seeds: Vec::new(),
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                outputs: Vec::new(),
                started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                wall_time_secs: 0.0,
            },
            start: Instant::now(),
        }
    }

    pub(crate) fn seeds(&mut self, seeds: &[u64]) {
        self.manifest.seeds = seeds.to_vec();
        self.manifest.seed = seeds.first().copied().filter(|_| seeds.len() == 1);
    }

    pub(crate) fn output(&mut self, name: impl Into<String>) {
        self.manifest.outputs.push(name.into());
    }

    pub(crate) fn finish(mut self, dir: &Path) -> Result<Manifest> {
        self.manifest.wall_time_secs = self.start.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(self.manifest)
    }
}
