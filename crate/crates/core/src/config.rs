//! Pipeline configuration: a TOML document with strict key checking, defaults
//! matching the reference experiment setup (learning rate 0.001, weight decay
//! 0.004, batch size 64, all margins 1).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synth::SyntheticConfig;
use crate::error::{Error, Result};
use crate::losses::Margins;
use crate::nn::sgd::SgdConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_learning_rate() -> f64 {
    0.001
}
fn default_weight_decay() -> f64 {
    0.004
}
fn default_batch_size() -> usize {
    64
}
fn default_iterations() -> usize {
    5000
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            iterations: default_iterations(),
        }
    }
}

impl StageConfig {
    pub fn to_sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_iterations: self.iterations,
        }
    }
}

/// Exactly one of `manifest` or `synthetic` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub margins: Margins,
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
    #[serde(default)]
    pub pretrain: StageConfig,
    #[serde(default)]
    pub finetune: StageConfig,
    #[serde(default)]
    pub metric: StageConfig,
    #[serde(default)]
    pub refine: StageConfig,
    /// Metric-network training pairs; defaults to min(300000, 30 * train docs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_count: Option<usize>,
    #[serde(default = "default_refine_hidden_dim")]
    pub refine_hidden_dim: usize,
    #[serde(default)]
    pub skip_pretrain: bool,
    #[serde(default)]
    pub use_intra_refine: bool,
    #[serde(default)]
    pub baseline_only: bool,
}

fn default_seed() -> u64 {
    1
}
fn default_split_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}
fn default_refine_hidden_dim() -> usize {
    1024
}

impl PipelineConfig {
    pub fn synthetic_default() -> Self {
        PipelineConfig {
            seed: default_seed(),
            dataset: DatasetSection {
                manifest: None,
                synthetic: Some(SyntheticConfig::default()),
            },
            margins: Margins::default(),
            split_fractions: default_split_fractions(),
            pretrain: StageConfig::default(),
            finetune: StageConfig::default(),
            metric: StageConfig::default(),
            refine: StageConfig::default(),
            pair_count: None,
            refine_hidden_dim: default_refine_hidden_dim(),
            skip_pretrain: false,
            use_intra_refine: false,
            baseline_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.manifest, &self.dataset.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "dataset section must name a manifest or a synthetic config, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "dataset section must name a manifest or a synthetic config".into(),
                ))
            }
            (None, Some(s)) => s.validate()?,
            (Some(_), None) => {}
        }
        self.margins.validate()?;
        for (name, stage) in [
            ("pretrain", &self.pretrain),
            ("finetune", &self.finetune),
            ("metric", &self.metric),
            ("refine", &self.refine),
        ] {
            stage
                .to_sgd()
                .validate()
                .map_err(|e| Error::Config(format!("stage {name}: {e}")))?;
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split_fractions must sum to 1, got {:?}",
                self.split_fractions
            )));
        }
        if self.refine_hidden_dim == 0 {
            return Err(Error::Config("refine_hidden_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(content: &str, path: &Path) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(content).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map(|s| content[..s.start].lines().count())
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&content, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn effective_pair_count(&self, train_docs: usize) -> usize {
        self.pair_count
            .unwrap_or_else(|| (30 * train_docs).min(300_000))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_config() {
        let mut config = PipelineConfig::synthetic_default();
        config.seed = 9;
        config.skip_pretrain = true;
        config.metric.iterations = 123;
        let text = config.to_toml_string();
        let loaded = PipelineConfig::from_toml_str(&text, Path::new("c.toml")).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "seed = 1\nbogus = true\n[dataset.synthetic]\nclasses = 3\ndocs_per_class = 5\nlatent_dim = 2\nimage_dim = 4\ntext_dim = 4\ncluster_spread = 1.0\nmodality_noise = 0.1\nseed = 1\n";
        assert!(PipelineConfig::from_toml_str(text, Path::new("c.toml")).is_err());
    }

    #[test]
    fn defaults_match_reference_setup() {
        let config = PipelineConfig::synthetic_default();
        assert_eq!(config.pretrain.learning_rate, 0.001);
        assert_eq!(config.pretrain.weight_decay, 0.004);
        assert_eq!(config.pretrain.batch_size, 64);
        assert_eq!(config.margins.lambda, 1.0);
        assert_eq!(config.margins.alpha, 1.0);
        assert_eq!(config.margins.beta, 1.0);
    }

    #[test]
    fn pair_count_default_is_capped() {
        let config = PipelineConfig::synthetic_default();
        assert_eq!(config.effective_pair_count(100), 3000);
        assert_eq!(config.effective_pair_count(100_000), 300_000);
    }

    #[test]
    fn both_dataset_sources_rejected() {
        let mut config = PipelineConfig::synthetic_default();
        config.dataset.manifest = Some(PathBuf::from("x.toml"));
        assert!(config.validate().is_err());
    }
}
