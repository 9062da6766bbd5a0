//! TOML pipeline configuration.

use std::path::{Path, PathBuf};

use cci_core::detector::DetectorConfig;
use cci_core::enhance::EnhanceConfig;
use cci_core::fixer::{lora_presets, KtoParams, LoraStagePreset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::LlmEndpoint;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Every gateway attempt is appended here when set.
    pub transcript: Option<PathBuf>,
    /// Four-shot file for semantic filtering; the bundled set otherwise.
    pub shots: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub voters: Vec<LlmEndpoint>,
    pub teacher: Option<LlmEndpoint>,
    pub fixer: Option<LlmEndpoint>,
    pub detector: DetectorConfig,
    pub enhance: EnhanceConfig,
    pub kto: KtoParams,
    pub lora: Vec<LoraStagePreset>,
    /// Candidates drawn by `select-validated`.
    pub validated_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: DEFAULT_SEED,
            paths: PathsConfig::default(),
            voters: Vec::new(),
            teacher: None,
            fixer: None,
            detector: DetectorConfig::default(),
            enhance: EnhanceConfig::default(),
            kto: KtoParams::default(),
            lora: lora_presets().to_vec(),
            validated_n: 300,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Joins relative file paths onto `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut().filter(|q| q.is_relative()) {
                *q = base.join(&*q);
            }
        };
        join(&mut self.paths.transcript);
        join(&mut self.paths.shots);
        join(&mut self.paths.model);
        join(&mut self.paths.reports);
        for ep in self.voters.iter_mut().chain(self.teacher.as_mut()).chain(self.fixer.as_mut()) {
            join(&mut ep.replay_path);
        }
    }

    /// Pushes the global seed into the stage configs.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.detector.seed = seed;
        self.enhance.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.detector.validate().map_err(|e| inv(&e))?;
        self.enhance.validate().map_err(|e| inv(&e))?;
        self.kto.validate().map_err(|e| inv(&e))?;
        for ep in self.voters.iter().chain(&self.teacher).chain(&self.fixer) {
            ep.validate().map_err(|e| inv(&e))?;
        }
        if !self.voters.is_empty() && self.voters.len() != 3 {
            return Err(ConfigError::Invalid(format!("expected 3 voters, found {}", self.voters.len())));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
