//! JSON run configuration.
//!
//! Field names follow the usual trainer hyperparameter names so one file can
//! describe both a training setup and the inference settings. Every field is
//! optional; callers layer command-line flags and environment variables on
//! top of it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FormatError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    /// Adapter rank of the original LLM training setup. Recorded for
    /// provenance only; nothing here trains adapters.
    pub lora_rank: Option<usize>,
    pub max_prompt_length: Option<usize>,
    pub max_completion_length: Option<usize>,
    pub group_size: Option<usize>,
    pub clip_eps: Option<f64>,
    pub kl_beta: Option<f64>,
    pub temperature: Option<f64>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub concurrency: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// The hyperparameters of the reference LLM training run.
    pub fn llm_defaults() -> Self {
        Self {
            learning_rate: Some(1e-5),
            batch_size: Some(64),
            lora_rank: Some(16),
            max_prompt_length: Some(4096),
            max_completion_length: Some(2048),
            group_size: Some(8),
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| FormatError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
