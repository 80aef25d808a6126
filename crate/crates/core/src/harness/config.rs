//! Experiment configuration, read from JSON. Every field has a default, so
//! `{}` is a valid file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::Acc2Mode;
use crate::error::{Error, Result};
use crate::objectives::ModelConfig;
use crate::syndata::{hex, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Every availability pattern, one at a time.
    Fixed,
    /// Per-sample random removal at `missing_rate`, repeated over `runs`.
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub protocol: ProtocolKind,
    /// Requested rate; capped at the largest rate that keeps one modality.
    pub missing_rate: f64,
    /// Mask seeds of the random protocol.
    pub runs: Vec<u64>,
    pub acc2_mode: Acc2Mode,
    /// Use the rayon path for evaluation.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: ProtocolKind::Random,
            missing_rate: 0.7,
            runs: (1..=5).collect(),
            acc2_mode: Acc2Mode::PosNeg,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: SyntheticConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    /// Training seed; also the data seed unless `data.seed` is set explicitly.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        let e = &self.eval;
        if !(0.0..=1.0).contains(&e.missing_rate) {
            return Err(Error::RateOutOfRange {
                mr: e.missing_rate,
                max: 1.0,
            });
        }
        if e.protocol == ProtocolKind::Random && e.runs.is_empty() {
            return Err(Error::InvalidConfig("random protocol needs at least one run".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn checksum(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(text.as_bytes()))
    }
}
