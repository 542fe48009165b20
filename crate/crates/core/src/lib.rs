//! Empathy-level alignment for dialogue generators.
//!
//! This crate trains a sequence-to-sequence dialogue policy with PPO against a
//! reward that combines a classifier-derived empathy score with a per-token KL
//! penalty anchoring the policy to its supervised starting point. The pieces:
//!
//! - [`corpus`]: dialogue and annotated-pair corpora, deterministic splits
//! - [`tokenizer`]: word-level vocabulary shared by policy and reference
//! - [`nn`]: small tensor type plus a reverse-mode tape and AdamW
//! - [`generator`]: seq2seq policy/reference wrapper with sampling, log-probs
//!   and a token-level value head
//! - [`identifier`]: per-mechanism empathy-level classifiers (dual encoders
//!   with cross-attention)
//! - [`reward`]: empathy reward, KL penalty, and reward-vector assembly
//! - [`ppo`]: rollout collection, GAE, clipped-surrogate training loop
//! - [`evalmetrics`]: PPL, Dist-1/2, and the empathy-F1 similarity metric
//! - [`config`]: run configuration, snapshotting, and defaults
//! - [`toy`]: synthetic corpora and keyword judges for desk-scale runs

pub mod config;
pub mod corpus;
pub mod evalmetrics;
pub mod generator;
pub mod identifier;
pub mod nn;
pub mod ppo;
pub mod reward;
pub mod seeding;
pub mod tokenizer;
pub mod toy;

pub use config::RunConfig;
pub use corpus::{AnnotatedPair, DialogueSample, EmpathyLevel, Mechanism, Role, Utterance};
pub use generator::{GeneratorModel, GeneratorRole, SamplingConfig};
pub use identifier::{EmpathyJudge, EmpathyJudgment, IdentifierModel, JudgeSet};
pub use ppo::{PpoConfig, TrainStats, Trajectory};
pub use reward::{RewardBreakdown, RewardConfig};
