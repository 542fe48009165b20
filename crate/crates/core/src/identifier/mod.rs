//! Empathy identifiers: one classifier per communication mechanism, each
//! predicting the empathy level of a response within its dialogue context.
//!
//! The architecture encodes context and response with two independent
//! encoders, cross-attends with the encoded response as query and the
//! encoded context as key/value, adds a residual from the encoded
//! response, max-pools over the response axis, and classifies into the
//! three levels.
//!
//! The [`EmpathyJudge`] trait is the surface the reward and evaluation
//! code consume; the trained [`IdentifierModel`] and the keyword judges in
//! [`crate::toy`] both implement it. Inference handles are immutable and
//! safe to share across threads.

mod model;
mod train;

pub use model::{IdentifierConfig, IdentifierModel, IdentifierParams};
pub use train::{train_identifier, IdentifierEpoch, IdentifierTrainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmpathyLevel, Mechanism};

#[derive(Debug, Error)]
pub enum IdentifierError {
    #[error("{side} text is empty after tokenization")]
    EmptyInput { side: &'static str },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("pair `{id}` carries no label for mechanism {mechanism}")]
    MissingLevel { id: String, mechanism: Mechanism },
    #[error("judge set requires one judge per mechanism in order, got {got} for slot {slot}")]
    MisorderedJudges { got: Mechanism, slot: Mechanism },
    #[error("checkpoint error at {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

/// Class-probability triple and hard label for one `<context, response>`
/// pair under one mechanism. `label` is the argmax of `probs` with ties
/// broken toward the lower class index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpathyJudgment {
    pub mechanism: Mechanism,
    pub probs: [f64; 3],
    pub label: EmpathyLevel,
}

impl EmpathyJudgment {
    pub fn from_probs(mechanism: Mechanism, probs: [f64; 3]) -> Self {
        Self {
            mechanism,
            probs,
            label: argmax_level(&probs),
        }
    }
}

/// Argmax with ties broken toward the lower class index.
pub fn argmax_level(probs: &[f64; 3]) -> EmpathyLevel {
    let mut best = 0usize;
    for i in 1..3 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    EmpathyLevel::from_code(best as u8).expect("index in range")
}

/// Anything that can judge the empathy level of a response in context.
pub trait EmpathyJudge: Send + Sync {
    fn mechanism(&self) -> Mechanism;

    fn judge(&self, context: &str, response: &str) -> Result<EmpathyJudgment, IdentifierError>;

    /// Batched, order-preserving equivalent of [`EmpathyJudge::judge`].
    fn judge_batch(
        &self,
        items: &[(String, String)],
    ) -> Result<Vec<EmpathyJudgment>, IdentifierError> {
        items
            .iter()
            .map(|(context, response)| self.judge(context, response))
            .collect()
    }
}

/// Exactly one judge per mechanism, indexable by [`Mechanism`].
pub struct JudgeSet {
    judges: [Box<dyn EmpathyJudge>; 3],
}

impl JudgeSet {
    /// The judges must arrive in mechanism order (emotional reaction,
    /// interpretation, exploration).
    pub fn new(judges: [Box<dyn EmpathyJudge>; 3]) -> Result<Self, IdentifierError> {
        for (slot, judge) in Mechanism::ALL.iter().zip(&judges) {
            if judge.mechanism() != *slot {
                return Err(IdentifierError::MisorderedJudges {
                    got: judge.mechanism(),
                    slot: *slot,
                });
            }
        }
        Ok(Self { judges })
    }

    pub fn get(&self, mechanism: Mechanism) -> &dyn EmpathyJudge {
        self.judges[mechanism.index()].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn EmpathyJudge> {
        self.judges.iter().map(|b| b.as_ref())
    }
}
