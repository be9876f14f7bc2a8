use std::path::{Path, PathBuf};

use grain_attr_core::model_client::ModelSpec;
use serde::{Deserialize, Serialize};

fn default_pool() -> usize {
    4
}

fn default_per_task() -> usize {
    1
}

fn default_concurrency() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub storage_root: PathBuf,
    /// Jobs that may run at once across all tasks.
    #[serde(default = "default_pool")]
    pub worker_pool_size: usize,
    /// Jobs that may run at once for one task; further jobs wait in `queued`.
    #[serde(default = "default_per_task")]
    pub max_jobs_per_task: usize,
    /// Coalitions scored concurrently inside one job.
    #[serde(default = "default_concurrency")]
    pub explain_concurrency: usize,
    /// Model used by tasks created without one: endpoint, rate limit, budget.
    #[serde(default)]
    pub default_model: Option<ModelSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ServiceConfig {
    pub fn new(storage_root: impl Into<PathBuf>) -> Self {
        Self {
            storage_root: storage_root.into(),
            worker_pool_size: default_pool(),
            max_jobs_per_task: default_per_task(),
            explain_concurrency: default_concurrency(),
            default_model: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Invalid {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |path: &str, message: &str| ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        };
        if self.worker_pool_size == 0 {
            return Err(invalid("worker_pool_size", "must be at least 1"));
        }
        if self.max_jobs_per_task == 0 {
            return Err(invalid("max_jobs_per_task", "must be at least 1"));
        }
        if self.explain_concurrency == 0 {
            return Err(invalid("explain_concurrency", "must be at least 1"));
        }
        if let Some(model) = &self.default_model {
            model
                .validate()
                .map_err(|e| invalid("default_model", &e.to_string()))?;
        }
        Ok(())
    }
}
