//! Generator checkpoint layout: `weights.json` (role marker, dimensions,
//! parameters, value head) plus `tokenizer.json` in the same directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeneratorError, GeneratorModel, GeneratorRole, Seq2SeqConfig, Seq2SeqParams, ValueHead};
use crate::tokenizer::Vocab;

#[derive(Serialize, Deserialize)]
struct GeneratorCheckpoint {
    role: GeneratorRole,
    cfg: Seq2SeqConfig,
    params: Seq2SeqParams,
    value_head: Option<ValueHead>,
}

impl GeneratorModel {
    /// Write `weights.json` and `tokenizer.json` into `dir` (created if
    /// missing).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), GeneratorError> {
        let ck = GeneratorCheckpoint {
            role: self.role,
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            value_head: self.value_head.clone(),
        };
        std::fs::create_dir_all(dir).map_err(|e| GeneratorError::Checkpoint {
            path: dir.display().to_string(),
            reason: e.to_string(),
        })?;
        let weights = serde_json::to_string(&ck).expect("checkpoint serializes");
        std::fs::write(dir.join("weights.json"), weights).map_err(|e| {
            GeneratorError::Checkpoint {
                path: dir.display().to_string(),
                reason: e.to_string(),
            }
        })?;
        self.vocab
            .save(&dir.join("tokenizer.json"))
            .map_err(|e| GeneratorError::Checkpoint {
                path: dir.display().to_string(),
                reason: e.to_string(),
            })
    }

    pub fn load_checkpoint(dir: &Path) -> Result<GeneratorModel, GeneratorError> {
        let weights_path = dir.join("weights.json");
        let raw = std::fs::read_to_string(&weights_path).map_err(|e| {
            GeneratorError::Checkpoint {
                path: weights_path.display().to_string(),
                reason: e.to_string(),
            }
        })?;
        let ck: GeneratorCheckpoint =
            serde_json::from_str(&raw).map_err(|e| GeneratorError::Checkpoint {
                path: weights_path.display().to_string(),
                reason: e.to_string(),
            })?;
        let vocab = Vocab::load(&dir.join("tokenizer.json")).map_err(|e| {
            GeneratorError::Checkpoint {
                path: dir.display().to_string(),
                reason: e.to_string(),
            }
        })?;
        if ck.params.embed.rows() != vocab.len() {
            return Err(GeneratorError::Checkpoint {
                path: dir.display().to_string(),
                reason: format!(
                    "embedding rows ({}) do not match tokenizer size ({})",
                    ck.params.embed.rows(),
                    vocab.len()
                ),
            });
        }
        Ok(GeneratorModel {
            role: ck.role,
            vocab,
            cfg: ck.cfg,
            params: ck.params,
            value_head: ck.value_head,
        })
    }
}
