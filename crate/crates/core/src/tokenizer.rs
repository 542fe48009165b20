//! Word-level vocabulary shared by the generator and the identifiers.
//!
//! Tokenization is lowercase + whitespace split. Four special ids are
//! reserved: `<pad>`, `<bos>`, `<eos>`, `<unk>`. The policy and the frozen
//! reference must share one vocabulary so their per-token log-probabilities
//! are comparable.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed vocabulary file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

/// Immutable token <-> id codec.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words
    }
}

impl Vocab {
    /// Build from a corpus of texts. Words are ranked by descending count
    /// (ties broken alphabetically) and the list is truncated to
    /// `max_words` content words on top of the four specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_words: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_words);

        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(ranked.into_iter().map(|(w, _)| w));
        Self::from_words(words)
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Encode text to content-token ids (no BOS/EOS added). Unknown words
    /// map to `<unk>`; whitespace-only text encodes to an empty sequence.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .map(|tok| self.index.get(&tok).copied().unwrap_or(UNK))
            .collect()
    }

    /// Decode ids to text, skipping `<pad>`, `<bos>`, and `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut parts = Vec::new();
        for &id in ids {
            if id == PAD || id == BOS || id == EOS {
                continue;
            }
            parts.push(self.words.get(id).map(|s| s.as_str()).unwrap_or("<unk>"));
        }
        parts.join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let json = serde_json::to_string_pretty(self).expect("vocab serializes");
        std::fs::write(path, json).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let raw = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parsed: Vocab = serde_json::from_str(&raw).map_err(|e| VocabError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if parsed.words.len() < SPECIALS.len()
            || parsed.words[..SPECIALS.len()] != SPECIALS.map(str::to_string)
        {
            return Err(VocabError::Malformed {
                path: path.display().to_string(),
                reason: "missing reserved special tokens".into(),
            });
        }
        Ok(Self::from_words(parsed.words))
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.to_lowercase())
}

/// Keep the last `max_len` ids (most recent dialogue turns).
pub fn truncate_left(ids: &[usize], max_len: usize) -> Vec<usize> {
    if ids.len() > max_len {
        ids[ids.len() - max_len..].to_vec()
    } else {
        ids.to_vec()
    }
}

/// Keep the first `max_len` ids.
pub fn truncate_right(ids: &[usize], max_len: usize) -> Vec<usize> {
    if ids.len() > max_len {
        ids[..max_len].to_vec()
    } else {
        ids.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic_and_ranked() {
        let texts = ["b b b a a c", "a c c"];
        let v1 = Vocab::build(texts, 100);
        let v2 = Vocab::build(texts, 100);
        assert_eq!(v1, v2);
        // a and b both occur 3 times, c twice; alphabetical tie-break
        assert_eq!(v1.token(4), Some("a"));
        assert_eq!(v1.token(5), Some("b"));
        assert_eq!(v1.token(6), Some("c"));
    }

    #[test]
    fn encode_decode_round_trip_lowercased() {
        let v = Vocab::build(["Hello world"], 10);
        let ids = v.encode("Hello WORLD");
        assert_eq!(v.decode(&ids), "hello world");
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocab::build(["known"], 10);
        assert_eq!(v.encode("mystery"), vec![UNK]);
        assert_eq!(v.decode(&[UNK]), "<unk>");
    }

    #[test]
    fn truncation_sides() {
        let ids = vec![1, 2, 3, 4, 5];
        assert_eq!(truncate_left(&ids, 2), vec![4, 5]);
        assert_eq!(truncate_right(&ids, 2), vec![1, 2]);
        assert_eq!(truncate_left(&ids, 9), ids);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let v = Vocab::build(["some words here"], 10);
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(v, loaded);
        assert_eq!(loaded.id("words"), v.id("words"));
    }
}
