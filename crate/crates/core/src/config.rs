//! Experiment configuration, read from a versioned TOML file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coherence::WINDOW;
use crate::error::{Error, Result};
use crate::heuristics::{H2TrainConfig, Heuristic};
use crate::lds::{DepthMode, SearchConfig};
use crate::local::{MlpTrainConfig, TrainConfig};
use crate::synth::SynthConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Drop probability on hidden layers; ignored by linear stages.
    pub dropout: f64,
    /// L2 penalty on the coherence weights; ignored by other stages.
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrunerStageConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Collect-then-train rounds; later rounds search with the pruner
    /// from the previous round.
    pub rounds: usize,
    /// L2 penalty on the distance from the warm start.
    pub l2: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            epochs: 10,
            lr: 0.05,
            dropout: 0.0,
            l2: 0.0,
        }
    }
}

impl Default for PrunerStageConfig {
    fn default() -> Self {
        PrunerStageConfig {
            epochs: 3,
            lr: 0.001,
            rounds: 1,
            l2: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub attention: StageConfig,
    pub local: StageConfig,
    pub coherence: StageConfig,
    pub h2: StageConfig,
    pub pruner: PrunerStageConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            attention: StageConfig {
                epochs: 10,
                lr: 0.05,
                dropout: 0.0,
                l2: 0.0,
            },
            local: StageConfig {
                epochs: 15,
                lr: 0.02,
                dropout: 0.7,
                l2: 0.0,
            },
            coherence: StageConfig {
                epochs: 10,
                lr: 0.05,
                dropout: 0.0,
                l2: 1.0,
            },
            h2: StageConfig {
                epochs: 30,
                lr: 0.01,
                dropout: 0.5,
                l2: 0.0,
            },
            pruner: PrunerStageConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub beam: usize,
    pub branch_k: usize,
    pub heuristic: Heuristic,
    pub depth: DepthMode,
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = SearchConfig::default();
        SearchSection {
            beam: s.beam,
            branch_k: s.branch_k,
            heuristic: s.heuristic,
            depth: s.depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub rarity_bins: usize,
    /// Sweep cap for the converged-propagation baseline.
    pub max_iters: usize,
    /// Fraction of mentions h1 flags in confusion reports.
    pub h1_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            rarity_bins: 10,
            max_iters: 50,
            h1_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub seed: u64,
    /// Candidates kept per mention after alias lookup.
    pub candidates: usize,
    pub window: usize,
    pub jobs: usize,
    pub search: SearchSection,
    pub train: TrainingConfig,
    pub eval: EvalSection,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            version: CONFIG_FORMAT_VERSION,
            seed: 0,
            candidates: 5,
            window: WINDOW,
            jobs: 1,
            search: SearchSection::default(),
            train: TrainingConfig::default(),
            eval: EvalSection::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without value checks, for callers that merge overrides
    /// before validating.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.candidates == 0
            || self.window < 2
            || self.eval.max_iters == 0
            || self.eval.rarity_bins == 0
        {
            return Err(Error::Config(
                "candidates, window, max_iters and rarity_bins must be positive".into(),
            ));
        }
        self.search_config().validate()?;
        self.synth.validate()
    }

    /// Sets the training and generator seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            beam: self.search.beam,
            branch_k: self.search.branch_k,
            heuristic: self.search.heuristic,
            depth: self.search.depth,
            seed: self.seed,
        }
    }

    /// Stage seeds are offsets of the global seed so stages draw
    /// independent streams.
    pub fn attention_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.attention.epochs,
            lr: self.train.attention.lr,
            seed: self.seed.wrapping_add(11),
            l2: 0.0,
        }
    }

    pub fn local_train(&self) -> MlpTrainConfig {
        MlpTrainConfig {
            epochs: self.train.local.epochs,
            lr: self.train.local.lr,
            dropout: self.train.local.dropout,
            seed: self.seed.wrapping_add(23),
        }
    }

    pub fn coherence_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.coherence.epochs,
            lr: self.train.coherence.lr,
            seed: self.seed.wrapping_add(37),
            l2: self.train.coherence.l2,
        }
    }

    pub fn h2_train(&self) -> H2TrainConfig {
        H2TrainConfig {
            epochs: self.train.h2.epochs,
            lr: self.train.h2.lr,
            dropout: self.train.h2.dropout,
            seed: self.seed.wrapping_add(41),
        }
    }

    pub fn pruner_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.pruner.epochs,
            lr: self.train.pruner.lr,
            seed: self.seed.wrapping_add(53),
            l2: self.train.pruner.l2,
        }
    }
}
