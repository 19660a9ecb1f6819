//! Run configuration: built-in defaults, overridden by an optional TOML or
//! JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use corpgraph::{DataConfig, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Fully resolved configuration of a `train` run. Written verbatim to
/// `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Copied into `model.seed` and `train.seed` on resolution.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(anyhow::Error::from)
        } else {
            toml::from_str(&text).map_err(anyhow::Error::from)
        };
        parsed.with_context(|| format!("parsing config {}", path.display())).map_err(crate::usage)
    }

    /// Propagates the shared seed and the data-derived model dimensions.
    pub fn resolve(mut self) -> Self {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.model.node_in_dim = self.data.window;
        self.model.num_classes = self.data.num_classes;
        self
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\n[train]\nepochs = 3\n[data]\nnum_classes = 5\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap().resolve();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.model.num_classes, 5);
        assert_eq!((cfg.model.seed, cfg.train.seed), (7, 7));
    }

    #[test]
    fn json_files_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"model": {"hidden_dim": 8}}"#).unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap().model.hidden_dim, 8);
    }

    #[test]
    fn malformed_file_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = \"x\"").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert!(err.downcast_ref::<crate::UsageError>().is_some());
    }
}
