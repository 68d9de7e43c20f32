use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::ErasingConfig;
use super::data::SyntheticDatasetSpec;
use crate::encoder::{EncoderConfig, Preset};
use crate::error::{Error, Result};
use crate::eval::CostModel;
use crate::losses::LossWeights;
use crate::numerics::{LrSchedule, OptimizerKind};
use crate::policy::{EtsTrainConfig, PolicyKind, Thresholds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub preset: Preset,
    /// Overrides the preset's stage widths.
    pub channel_dims: Option<[usize; 4]>,
    /// Stage-1 code length `c`; exits emit `[c, c, 4c, 8c]` bits.
    pub code_len: Option<usize>,
    pub hidden_dim: Option<usize>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self { preset: Preset::Toy, channel_dims: None, code_len: None, hidden_dim: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Identities per batch.
    pub p: usize,
    /// Samples per identity in a batch.
    pub k: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: LrSchedule,
    pub weight_decay: f64,
    /// Epochs between checkpoints and flip checks.
    pub checkpoint_interval: usize,
    pub erasing: ErasingConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            p: 16,
            k: 4,
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            lr: LrSchedule { base: 1e-3, milestones: vec![60, 85], gamma: 0.1 },
            weight_decay: 5e-4,
            checkpoint_interval: 10,
            erasing: ErasingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Filled in by `train-policy`.
    pub thresholds: Thresholds,
    pub ets: EtsTrainConfig,
    /// Market-1501 style removal of same-identity, same-source gallery entries.
    pub same_source_filter: bool,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { kind: PolicyKind::EtsGs, thresholds: Thresholds::default(), ets: EtsTrainConfig::default(), same_source_filter: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    /// Explicit budgets; when empty, `steps` equal increments from the cost floor to 1.
    pub budgets: Vec<f64>,
    pub steps: usize,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self { budgets: Vec::new(), steps: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticDatasetSpec),
    /// External feature files, reshaped to `shape` (see `ingest_embeddings`).
    Embeddings { dir: PathBuf, shape: [usize; 3] },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticDatasetSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub lengths: Vec<usize>,
    pub n_gallery: usize,
    pub n_queries: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { lengths: vec![128, 256, 512, 1024, 2048], n_gallery: 10_000, n_queries: 100 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderSection,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub policy: PolicySection,
    pub cost: CostModel,
    pub budget: BudgetSection,
    pub bench: BenchSection,
    pub data: DataSource,
}

impl RunConfig {
    /// The desk-scale synthetic setup under `seed`: toy encoder, 70% easy
    /// samples, 100 epochs.
    pub fn reference(seed: u64) -> Self {
        Self { seed, ..Default::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { path: path.to_path_buf(), hint: "pass an existing --config file".into() });
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.epochs == 0 || t.checkpoint_interval == 0 || t.checkpoint_interval > t.epochs {
            return Err(Error::Config(format!(
                "epochs ({}) and checkpoint_interval ({}) must be positive with the interval at most the epoch count",
                t.epochs, t.checkpoint_interval
            )));
        }
        if t.epochs / t.checkpoint_interval < 2 {
            return Err(Error::Config("flip statistics need at least two checkpoints".into()));
        }
        t.erasing.validate()?;
        self.cost.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if self.budget.budgets.is_empty() && self.budget.steps == 0 {
            return Err(Error::Config("budget.steps must be positive when no budgets are listed".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match &self.data {
            DataSource::Synthetic(spec) => spec.shape,
            DataSource::Embeddings { shape, .. } => *shape,
        }
    }

    pub fn encoder_config(&self, num_classes: usize) -> EncoderConfig {
        let mut cfg = EncoderConfig::preset(self.encoder.preset, num_classes);
        if let Some(d) = self.encoder.channel_dims {
            cfg.channel_dims = d;
        }
        if let Some(c) = self.encoder.code_len {
            cfg.code_len = c;
        }
        if let Some(h) = self.encoder.hidden_dim {
            cfg.hidden_dim = h;
        }
        cfg.input = self.input_shape();
        cfg
    }

    pub fn budgets(&self) -> Vec<f64> {
        if self.budget.budgets.is_empty() {
            crate::eval::budget_grid(&self.cost, self.budget.steps)
        } else {
            self.budget.budgets.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::reference(3);
        cfg.policy.thresholds.gs = Some([1.0, 2.0, 3.0]);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::from_toml("seed = 5\n[train]\nepochs = 20\ncheckpoint_interval = 5\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.train.p, 16);
        assert_eq!(cfg.loss, LossWeights::default());
        assert_eq!(cfg.policy.kind, PolicyKind::EtsGs);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("sede = 5\n").is_err());
        assert!(RunConfig::from_toml("[train]\ncheckpoint_interval = 0\n").is_err());
        assert!(RunConfig::from_toml("[cost]\nfractions = [0.5, 0.5, 0.5, 0.5]\n").is_err());
        assert!(matches!(RunConfig::load(Path::new("/nonexistent.toml")), Err(Error::MissingArtifact { .. })));
    }

    #[test]
    fn embedding_source_and_code_len_override() {
        let cfg = RunConfig::from_toml(
            "[encoder]\ncode_len = 64\n[data]\nsource = \"embeddings\"\ndir = \"feats\"\nshape = [32, 16, 3]\n",
        )
        .unwrap();
        assert_eq!(cfg.encoder_config(10).code_lens(), [64, 64, 256, 512]);
        assert!(matches!(cfg.data, DataSource::Embeddings { .. }));
    }
}
