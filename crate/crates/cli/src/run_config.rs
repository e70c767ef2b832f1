use std::path::{Path, PathBuf};

use rksa::attention::ForwardMode;
use rksa::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Run configuration read from TOML or JSON; command-line flags override it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Prepared dataset written by `prepare`.
    pub data: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mode: ForwardMode,
    pub seeds: Vec<u64>,
    pub k_neg: usize,
    pub full_catalog: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: ForwardMode::EvalLocation,
            seeds: vec![0, 1, 2, 3, 4],
            k_neg: 100,
            full_catalog: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Data(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
            _ => toml::from_str(&text).map_err(|e| e.to_string()),
        };
        parsed.map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Relative paths land under `$RKSA_OUTPUT_ROOT` when it is set.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os("RKSA_OUTPUT_ROOT") {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_sections_parse_and_unknown_keys_fail() {
        let cfg: RunConfig = toml::from_str(
            r#"
            data = "prepared/dataset.json"
            [train]
            lr = 0.002
            [train.kernel]
            active = "C"
            [eval]
            seeds = [1, 2]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.train.kernel.active.to_string(), "C");
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.eval.seeds, vec![1, 2]);
        assert!(toml::from_str::<RunConfig>("[train]\nlearning_rate = 1.0").is_err());
        assert!(toml::from_str::<RunConfig>("extra = 1").is_err());
    }
}
