use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchPlan;
use crate::error::{Error, Result};
use crate::network::ArchKind;
use crate::synthcup::GeneratorConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureSection {
    pub arch: ArchKind,
    pub h: usize,
    pub alpha: f64,
    pub k: usize,
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        Self {
            arch: ArchKind::CupNet,
            h: 2,
            alpha: 5.0,
            k: 9,
        }
    }
}

/// Optimizer and split settings. The training seed is the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub val_every: usize,
    pub test_fraction: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            batch_size: t.batch_size,
            epochs: t.epochs,
            dropout_rate: t.dropout_rate,
            val_every: t.val_every,
            test_fraction: 0.1,
        }
    }
}

impl TrainingSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            dropout_rate: self.dropout_rate,
            val_every: self.val_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub h_values: Vec<usize>,
    pub alpha_values: Vec<f64>,
    pub runs: usize,
    pub architectures: Vec<ArchKind>,
    /// Worker threads; 0 means one per available processor.
    pub jobs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let plan = BenchPlan::default();
        Self {
            h_values: plan.h_values,
            alpha_values: plan.alpha_values,
            runs: plan.runs,
            architectures: plan.architectures,
            jobs: 0,
        }
    }
}

/// Complete configuration document. Every field has a default, unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub architecture: ArchitectureSection,
    pub training: TrainingSection,
    pub bench: BenchSection,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn bench_plan(&self) -> BenchPlan {
        BenchPlan {
            h_values: self.bench.h_values.clone(),
            alpha_values: self.bench.alpha_values.clone(),
            runs: self.bench.runs,
            test_fraction: self.training.test_fraction,
            architectures: self.bench.architectures.clone(),
            master_seed: self.seed,
            train: self.training.train_config(self.seed),
        }
    }

    /// Writes the effective configuration as `config.json` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = CliConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: CliConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg: CliConfig = serde_json::from_str(r#"{"training": {"epochs": 3}, "bench": {"runs": 2}}"#).unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.bench.runs, 2);
        assert_eq!(cfg.generator, GeneratorConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<CliConfig>(r#"{"trainig": {}}"#).is_err());
        assert!(serde_json::from_str::<CliConfig>(r#"{"generator": {"radial": 3}}"#).is_err());
        assert!(serde_json::from_str::<CliConfig>(r#"{"bench": {"run": 3}}"#).is_err());
        assert!(serde_json::from_str::<CliConfig>(r#"{"architecture": {"depth": 3}}"#).is_err());
        assert!(serde_json::from_str::<CliConfig>(r#"{"training": {"lr": 3}}"#).is_err());
    }
}
