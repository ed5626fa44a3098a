//! Pipeline configuration: TOML file first, flag overrides second, and a
//! machine-readable run record per command for provenance.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hmic_core::arch::Level;
use hmic_core::train::TrainConfig;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub slides: PathBuf,
    pub patches: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
    pub runs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            slides: "data/slides".into(),
            patches: "data/patches".into(),
            models: "models".into(),
            reports: "reports".into(),
            runs: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSettings {
    pub size: usize,
    /// 0 means "same as size" (non-overlapping tiles).
    pub stride: usize,
    /// Slide-level test fraction used when the labels CSV carries no split.
    pub test_fraction: f64,
}

impl Default for PatchSettings {
    fn default() -> Self {
        PatchSettings {
            size: 1000,
            stride: 0,
            test_fraction: 0.2,
        }
    }
}

impl PatchSettings {
    pub fn effective_stride(&self) -> usize {
        if self.stride == 0 {
            self.size
        } else {
            self.stride
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub epochs: usize,
    /// Patches are area-resized to this square side before encoding.
    pub input: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            epochs: 5,
            input: 128,
        }
    }
}

/// Stain transform per hierarchy level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StainMode {
    ColorBalance,
    StainNormalize,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StainSettings {
    pub parent_mode: StainMode,
    pub child_mode: StainMode,
    /// Color-balancing strength for the parent level, percent in [0, 100].
    pub percent: f64,
    /// Target profile JSON for the child level.
    pub target_profile: Option<PathBuf>,
    pub lambda: f64,
}

impl Default for StainSettings {
    fn default() -> Self {
        StainSettings {
            parent_mode: StainMode::ColorBalance,
            child_mode: StainMode::StainNormalize,
            percent: 5.0,
            target_profile: None,
            lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    /// Model input side; 1000 is the full-scale geometry, 128 the compact
    /// training geometry.
    pub arch_input: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_conv: f64,
    pub dropout_dense: f64,
    pub early_stop: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            arch_input: 128,
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 20,
            dropout_conv: 0.25,
            dropout_dense: 0.5,
            early_stop: false,
        }
    }
}

impl TrainSettings {
    pub fn to_core(&self, level: Level, seed: u64) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout_conv: self.dropout_conv,
            dropout_dense: self.dropout_dense,
            seed,
            level,
            early_stop: self.early_stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub patch: PatchSettings,
    pub filter: FilterSettings,
    pub stain: StainSettings,
    pub train_parent: TrainSettings,
    pub train_child: TrainSettings,
    pub train_flat: TrainSettings,
    pub seed: u64,
    /// 0 means all cores.
    pub workers: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| PipelineError::format(path, format!("config parse: {e}")))
    }

    /// SHA-256 over the canonical JSON encoding of the effective config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        hex::encode(hasher.finalize())
    }
}

/// Provenance record written next to every command invocation.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub timestamp_unix_ms: u128,
    pub outputs: Vec<String>,
}

pub fn write_run_record(cfg: &PipelineConfig, command: &str, outputs: &[String]) -> Result<PathBuf> {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let record = RunRecord {
        command,
        argv: std::env::args().collect(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        workers: cfg.workers,
        timestamp_unix_ms: timestamp,
        outputs: outputs.to_vec(),
    };
    std::fs::create_dir_all(&cfg.paths.runs)
        .map_err(|e| PipelineError::io(&cfg.paths.runs, e))?;
    let path = cfg.paths.runs.join(format!("{timestamp}_{command}.json"));
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| PipelineError::format(&path, format!("run record: {e}")))?;
    std::fs::write(&path, json).map_err(|e| PipelineError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_an_empty_config() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.patch.size, 1000);
        assert_eq!(cfg.patch.effective_stride(), 1000);
        assert_eq!(cfg.stain.parent_mode, StainMode::ColorBalance);
        assert_eq!(cfg.stain.child_mode, StainMode::StainNormalize);
        assert_eq!(cfg.train_parent.alpha, 0.001);
    }

    #[test]
    fn hash_changes_iff_an_effective_parameter_changes() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        b.seed = 0;
        assert_eq!(a.hash(), b.hash());
        b.train_child.epochs = 7;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_overrides_apply() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            seed = 42
            [patch]
            size = 128
            [stain]
            parent_mode = "none"
            percent = 12.5
            [train_parent]
            epochs = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.patch.size, 128);
        assert_eq!(cfg.stain.parent_mode, StainMode::None);
        assert_eq!(cfg.stain.percent, 12.5);
        assert_eq!(cfg.train_parent.epochs, 3);
        assert_eq!(cfg.train_child.epochs, 20);
    }
}
