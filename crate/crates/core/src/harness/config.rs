use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BaselineKind, SchemeOptions};
use crate::channel::{ChannelConfig, ChannelParams};
use crate::error::{Error, Result};
use crate::fl::TrainingConfig;
use crate::tasks::TaskConfig;
use crate::topology::{PartitionConfig, TopologyConfig};

/// Environment variable that roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "RELAYFL_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub partition: PartitionConfig,
    pub channel: ChannelConfig,
    pub training: TrainingConfig,
    pub task: TaskConfig,
    pub schemes: Vec<BaselineKind>,
    pub options: SchemeOptions,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            topology: TopologyConfig::default(),
            partition: PartitionConfig::default(),
            channel: ChannelConfig::default(),
            training: TrainingConfig::default(),
            task: TaskConfig::default(),
            schemes: BaselineKind::ALL.to_vec(),
            options: SchemeOptions::default(),
            seeds: vec![1],
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "must list at least one scheme"));
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(Error::config("schemes", "lists a scheme twice"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::config("seeds", "lists a seed twice"));
        }
        self.training.validate()?;
        ChannelParams::from_config(&self.channel)?;
        if let Some(0) = self.options.hfl_cloud_period {
            return Err(Error::config("options.hfl_cloud_period", "must be positive when set"));
        }
        if let Some(t) = self.options.scheduler.tmax_override {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::config("options.scheduler.tmax_override", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration, leaving out where results
    /// are written.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&cfg).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// `output_dir`, placed under the output root variable when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
