use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// Artifact layout of one run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["data", "checkpoints", "policy", "codes", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("encoder-e{epoch:04}"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("encoder-final")
    }

    pub fn flips(&self) -> PathBuf {
        self.root.join("flips.tsv")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }

    pub fn ets(&self) -> PathBuf {
        self.root.join("policy").join("ets")
    }

    pub fn thresholds(&self) -> PathBuf {
        self.root.join("policy").join("thresholds.toml")
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("policy").join("calibration.csv")
    }

    pub fn ets_report(&self) -> PathBuf {
        self.root.join("policy").join("ets_report.txt")
    }

    pub fn codes(&self, split: &str, stage: u8) -> PathBuf {
        self.root.join("codes").join(format!("{split}-s{stage}.hrc"))
    }

    /// Stage-1 part-pooled features used by the ETS classifier.
    pub fn features(&self, split: &str) -> PathBuf {
        self.root.join("codes").join(format!("{split}-s1.hre"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}
