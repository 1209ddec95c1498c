//! Pipeline configuration: defaults, then a JSON or TOML file, then
//! `ADOT_<FIELD>` environment variables, then command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use adot_core::cache::{DEFAULT_CAPACITY, DEFAULT_SEMANTIC_THRESHOLD};
use adot_core::dataops::DEFAULT_MAX_ITERATIONS;
use adot_core::exec::INLINE_THRESHOLD;
use adot_core::vector::DEFAULT_ALPHA;
use adot_core::Context;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid setting `{field}`: {message}")]
    Range { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cache_capacity: usize,
    pub cache_threshold: f64,
    pub cache_enabled: bool,
    pub cache_file: Option<PathBuf>,
    pub alpha: f64,
    pub top_k: usize,
    pub max_parallel: Option<usize>,
    pub max_fix_iterations: usize,
    pub node_timeout_ms: u64,
    pub inline_threshold: usize,
    pub slimming: bool,
    pub dataops: bool,
    pub audit: bool,
    pub planner: Option<String>,
    pub replanner: Option<String>,
    pub store: Option<PathBuf>,
    pub role: String,
    pub policy_flags: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cache_capacity: DEFAULT_CAPACITY,
            cache_threshold: DEFAULT_SEMANTIC_THRESHOLD,
            cache_enabled: true,
            cache_file: None,
            alpha: DEFAULT_ALPHA,
            top_k: 5,
            max_parallel: None,
            max_fix_iterations: DEFAULT_MAX_ITERATIONS,
            node_timeout_ms: 30_000,
            inline_threshold: INLINE_THRESHOLD,
            slimming: true,
            dataops: true,
            audit: true,
            planner: None,
            replanner: None,
            store: None,
            role: String::new(),
            policy_flags: Vec::new(),
        }
    }
}

impl PipelineConfig {
    /// Reads a `.toml` file as TOML and anything else as JSON.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        if path.extension().is_some_and(|x| x == "toml") {
            toml::from_str(&text).map_err(|e| err(e.to_string()))
        } else {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))
        }
    }

    /// Applies `ADOT_<FIELD>` overrides from `vars`. Values are read as JSON
    /// when they parse as JSON and as plain strings otherwise.
    pub fn apply_env(self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let serde_json::Value::Object(mut map) = serde_json::to_value(&self).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        let fields: BTreeSet<String> = map.keys().cloned().collect();
        let mut touched = Vec::new();
        for (name, raw) in vars {
            let Some(field) = name.strip_prefix("ADOT_").map(str::to_ascii_lowercase) else {
                continue;
            };
            if !fields.contains(&field) {
                continue;
            }
            let value = serde_json::from_str(&raw).unwrap_or(serde_json::Value::String(raw));
            map.insert(field, value);
            touched.push(name);
        }
        serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| ConfigError::Env {
            name: touched.join(", "),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |field, message: &str| {
            Err(ConfigError::Range {
                field,
                message: message.into(),
            })
        };
        if !(0.0..=1.0).contains(&self.cache_threshold) {
            return range("cache_threshold", "must be within [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return range("alpha", "must be within [0, 1]");
        }
        if self.cache_capacity < 1 {
            return range("cache_capacity", "must be at least 1");
        }
        if self.top_k < 1 {
            return range("top_k", "must be at least 1");
        }
        if self.max_parallel == Some(0) {
            return range("max_parallel", "must be at least 1");
        }
        if self.node_timeout_ms == 0 {
            return range("node_timeout_ms", "must be positive");
        }
        Ok(())
    }

    pub fn context(&self) -> Context {
        Context {
            role: self.role.clone(),
            policy_flags: self.policy_flags.iter().cloned().collect(),
        }
    }
}
