//! Run configuration: one JSON file wiring corpus, embeddings, oracle
//! backends, loop/merge/role settings, output directory and the global seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::oracle::OracleBackendSpec;
use crate::pipeline::LoopConfig;
use crate::postprocess::MergeConfig;

use super::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbeddingSource {
    File {
        path: PathBuf,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key: Option<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeSettings {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(flatten)]
    pub config: MergeConfig,
}

impl Default for MergeSettings {
    fn default() -> Self {
        MergeSettings {
            enabled: true,
            config: MergeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleSettings {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub lexicon_path: Option<PathBuf>,
}

impl Default for RoleSettings {
    fn default() -> Self {
        RoleSettings {
            enabled: true,
            lexicon_path: None,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub embeddings: EmbeddingSource,
    pub oracles: Vec<OracleBackendSpec>,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    #[serde(default)]
    pub merge: MergeSettings,
    #[serde(default)]
    pub roles: RoleSettings,
    #[serde(default)]
    pub few_shot_coherence_path: Option<PathBuf>,
    #[serde(default)]
    pub few_shot_naming_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Bounded parallelism for oracle requests.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_in_flight() -> usize {
    8
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| IoError::InvalidConfig(e.to_string()))?;
        config.interpolate_secrets()?;
        config.validate()?;
        Ok(config)
    }

    /// Expands `${VAR}` placeholders in secret fields from the environment.
    fn interpolate_secrets(&mut self) -> Result<(), IoError> {
        if let EmbeddingSource::Remote { api_key, .. } = &mut self.embeddings {
            *api_key = expand(api_key.take())?;
        }
        for oracle in &mut self.oracles {
            if let OracleBackendSpec::RemoteChat { api_key, .. } = oracle {
                *api_key = expand(api_key.take())?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.oracles.is_empty() {
            return Err(IoError::InvalidConfig(
                "at least one oracle backend is required".into(),
            ));
        }
        for oracle in &self.oracles {
            oracle
                .validate()
                .map_err(|e| IoError::InvalidConfig(e.to_string()))?;
        }
        self.loop_config
            .validate()
            .map_err(|e| IoError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

fn expand(value: Option<String>) -> Result<Option<String>, IoError> {
    match value {
        Some(v) if v.starts_with("${") && v.ends_with('}') => {
            let var = &v[2..v.len() - 1];
            match std::env::var(var) {
                Ok(resolved) => Ok(Some(resolved)),
                Err(_) => Err(IoError::InvalidConfig(format!(
                    "environment variable {var} referenced by config is not set"
                ))),
            }
        }
        other => Ok(other),
    }
}
