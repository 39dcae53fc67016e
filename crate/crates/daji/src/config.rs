//! Resolved experiment configuration: one nested document covering every
//! module's keys, JSON on disk, dotted-path flag overrides, and a content
//! digest embedded in all artifacts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

use crate::act::ActConfig;
use crate::eval::EvalConfig;
use crate::flow::FlowConfig;
use crate::sim::{DatasetConfig, ObsConfig, RewardConfig, SimConfig};
use crate::teacher::{PpoConfig, TeacherConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("invalid override `{key}`: {reason}")]
    BadOverride { key: String, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeployConfig {
    pub mode: String,
    pub horizon_s: f64,
    pub rollouts: usize,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig { mode: "lockstep".to_string(), horizon_s: 20.0, rollouts: 8 }
    }
}

/// The full resolved configuration for one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub sim: SimConfig,
    pub dataset: DatasetConfig,
    pub obs: ObsConfig,
    pub reward: RewardConfig,
    pub teacher: TeacherConfig,
    pub ppo: PpoConfig,
    pub act: ActConfig,
    pub flow: FlowConfig,
    pub eval: EvalConfig,
    pub deploy: DeployConfig,
}

impl Config {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Loads a config file (or defaults when `path` is None) and applies
/// `key.path=value` overrides. Unknown keys anywhere are hard errors.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, ConfigError> {
    let base: serde_json::Value = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| ConfigError::Parse(e.to_string()))?,
        None => serde_json::to_value(Config::default()).expect("default config serializes"),
    };
    let mut doc = base;
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride { key: ov.clone(), reason: "expected key.path=value".into() })?;
        set_dotted(&mut doc, key, raw)?;
    }
    serde_json::from_value(doc).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown field") {
            ConfigError::UnknownKey(msg)
        } else {
            ConfigError::Parse(msg)
        }
    })
}

/// Sets `doc[a][b][c] = value` for key "a.b.c". The path must already
/// exist (overrides cannot invent keys) and the parsed value replaces the
/// old one; bare words become strings.
fn set_dotted(doc: &mut serde_json::Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| ConfigError::BadOverride {
            key: key.to_string(),
            reason: format!("`{}` is not a table", parts[..i].join(".")),
        })?;
        node = obj.get_mut(*part).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        if i + 1 == parts.len() {
            let value: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            *node = value;
        }
    }
    Ok(())
}
