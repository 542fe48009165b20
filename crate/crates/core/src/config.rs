//! Run configuration: one TOML tree covering every stage, snapshotted
//! verbatim into each artifact directory so any result can be reproduced
//! from the directory alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueFormat;
use crate::evalmetrics::EvalConfig;
use crate::generator::{FinetuneConfig, Seq2SeqConfig};
use crate::identifier::IdentifierTrainConfig;
use crate::ppo::PpoConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("cannot write config {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

/// Corpus file locations and rendering options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub dialogues_train: Option<PathBuf>,
    pub dialogues_val: Option<PathBuf>,
    pub dialogues_test: Option<PathBuf>,
    pub dialogue_format: DialogueFormat,
    pub annotated: Option<PathBuf>,
    /// Fraction of annotated pairs held out for identifier validation.
    pub holdout_fraction: f64,
    pub turn_separator: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dialogues_train: None,
            dialogues_val: None,
            dialogues_test: None,
            dialogue_format: DialogueFormat::EmpatheticDialogues,
            annotated: None,
            holdout_fraction: 0.2,
            turn_separator: " ".into(),
        }
    }
}

/// Generator architecture plus supervised fine-tuning settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorStageConfig {
    pub model: Seq2SeqConfig,
    pub finetune: FinetuneConfig,
    /// Content-word cap for the tokenizer built during fine-tuning.
    pub max_vocab: usize,
}

/// Every tunable of every stage, with one seed that derives each stage's
/// streams. Numeric defaults follow the reference hyperparameters:
/// fine-tune lr 1e-4 / batch 8; PPO 1600 steps / lr 1e-5 / batch 32;
/// beta, gamma, lambda, alpha, epsilon = 0.2, 1.0, 0.95, 0.1, 0.2;
/// decoding k = 20, p = 1.0, tau = 0.9, 30 steps max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub device: String,
    pub corpus: CorpusConfig,
    pub identifier: IdentifierTrainConfig,
    pub generator: GeneratorStageConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("runs/default"),
            device: "cpu".into(),
            corpus: CorpusConfig::default(),
            identifier: IdentifierTrainConfig::default(),
            generator: GeneratorStageConfig {
                model: Seq2SeqConfig::default(),
                finetune: FinetuneConfig::default(),
                max_vocab: 8000,
            },
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Write the exact configuration snapshot into an artifact directory.
    pub fn snapshot(&self, dir: &Path) -> Result<(), ConfigError> {
        std::fs::create_dir_all(dir).map_err(|source| ConfigError::Write {
            path: dir.display().to_string(),
            source,
        })?;
        let path = dir.join("config.toml");
        let body = toml::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, body).map_err(|source| ConfigError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    /// Propagate the top-level seed into every stage seed. Command-line
    /// `--seed` goes through here so one flag pins the whole run.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.identifier.seed = seed;
        self.generator.finetune.seed = seed;
        self.ppo.seed = seed;
        self.ppo.rollout_sampling.seed = seed;
        self.eval.sampling.seed = seed;
    }

    /// Directory conventions under `output_dir`, so stages compose
    /// without flag plumbing.
    pub fn identifiers_dir(&self) -> PathBuf {
        self.output_dir.join("identifiers")
    }

    pub fn identifier_dir(&self, mechanism: crate::corpus::Mechanism) -> PathBuf {
        self.identifiers_dir().join(mechanism.name())
    }

    pub fn generator_dir(&self) -> PathBuf {
        self.output_dir.join("generator")
    }

    pub fn rl_dir(&self) -> PathBuf {
        self.output_dir.join("rl")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pin_reference_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.generator.finetune.lr, 1.0e-4);
        assert_eq!(cfg.generator.finetune.batch_size, 8);
        assert_eq!(cfg.ppo.steps, 1600);
        assert_eq!(cfg.ppo.lr, 1.0e-5);
        assert_eq!(cfg.ppo.batch_size, 32);
        assert_eq!(cfg.ppo.reward.beta, 0.2);
        assert_eq!(cfg.ppo.gamma, 1.0);
        assert_eq!(cfg.ppo.lam, 0.95);
        assert_eq!(cfg.ppo.alpha, 0.1);
        assert_eq!(cfg.ppo.epsilon, 0.2);
        assert_eq!(cfg.ppo.rollout_sampling.top_k, 20);
        assert_eq!(cfg.ppo.rollout_sampling.top_p, 1.0);
        assert_eq!(cfg.ppo.rollout_sampling.temperature, 0.9);
        assert_eq!(cfg.ppo.rollout_sampling.max_steps, 30);
        assert_eq!(cfg.corpus.holdout_fraction, 0.2);
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.corpus.annotated = Some(PathBuf::from("/data/annotated.csv"));
        cfg.ppo.steps = 7;
        cfg.snapshot(dir.path()).unwrap();
        let loaded = RunConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(loaded, cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.toml");
        std::fs::write(&path, "seed = 7\n[ppo]\nsteps = 3\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ppo.steps, 3);
        assert_eq!(cfg.ppo.lr, 1.0e-5);
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = RunConfig::default();
        cfg.override_seed(99);
        assert_eq!(cfg.identifier.seed, 99);
        assert_eq!(cfg.generator.finetune.seed, 99);
        assert_eq!(cfg.ppo.seed, 99);
        assert_eq!(cfg.ppo.rollout_sampling.seed, 99);
        assert_eq!(cfg.eval.sampling.seed, 99);
    }
}
