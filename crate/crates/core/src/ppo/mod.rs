//! PPO training loop: rollout collection, generalized advantage
//! estimation, clipped-surrogate and value losses, and policy updates.
//!
//! One training step is one rollout batch followed by its PPO epochs.
//! Per-step and per-sample seeds derive from `(seed, step)` so a run can
//! stop at any checkpoint and resume bit-identically.

mod gae;
mod loss;
mod rollout;
mod train;

pub use gae::gae;
pub use loss::{
    clipped_surrogate, policy_loss_components, policy_loss_gradients, total_loss, value_loss,
};
pub use rollout::{collect_rollouts, collect_rollouts_detailed, Rollout};
pub use train::{PpoTrainer, StepEvent};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GeneratorError, SamplingConfig};
use crate::reward::{RewardConfig, RewardError};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("list length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input lists must be non-empty")]
    EmptyInput,
    #[error("rollout batch is empty")]
    EmptyBatch,
    #[error("trajectory `{id}` is inconsistent: {reason}")]
    InconsistentTrajectory { id: String, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("policy model must carry a value head")]
    PolicyWithoutValueHead,
    #[error("expected a {expected} model")]
    WrongRole { expected: &'static str },
    #[error(
        "training diverged: mean KL {mean_kl:.4} exceeded ceiling for {streak} consecutive steps (step {step})"
    )]
    Diverged {
        step: usize,
        mean_kl: f64,
        streak: usize,
    },
    #[error("step callback failed: {0}")]
    Callback(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// One sampled response with everything PPO needs: per-token ids, policy
/// and reference log-probs, the frozen rollout-time snapshots, values,
/// rewards, advantages, and returns. All per-token lists share one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_id: String,
    pub context: String,
    pub target: String,
    pub generated: String,
    pub token_ids: Vec<usize>,
    /// Current-policy log-probs; equal to `old_policy_logprobs` at rollout
    /// time, refreshed after updates.
    pub policy_logprobs: Vec<f64>,
    pub reference_logprobs: Vec<f64>,
    /// Snapshot of the sampling-time policy; never mutated afterwards.
    pub old_policy_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub old_values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Regression targets: `advantages + old_values`.
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub(crate) fn validate_for_update(&self) -> Result<(), PpoError> {
        let t = self.token_ids.len();
        if t == 0 {
            return Err(PpoError::InconsistentTrajectory {
                id: self.sample_id.clone(),
                reason: "empty token list".into(),
            });
        }
        let lens = [
            self.policy_logprobs.len(),
            self.reference_logprobs.len(),
            self.old_policy_logprobs.len(),
            self.values.len(),
            self.old_values.len(),
            self.rewards.len(),
            self.advantages.len(),
            self.returns.len(),
        ];
        if lens.iter().any(|&l| l != t) {
            return Err(PpoError::InconsistentTrajectory {
                id: self.sample_id.clone(),
                reason: format!("per-token lists disagree on length (tokens = {t}, lists = {lens:?})"),
            });
        }
        Ok(())
    }
}

/// PPO hyperparameters. Defaults: gamma 1.0, lambda 0.95, value-loss
/// weight alpha 0.1, clip range epsilon 0.2, 1600 steps, learning rate
/// 1e-5, batch 32.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Gradient passes per rollout batch (minibatch = the whole batch).
    pub ppo_epochs: usize,
    /// Mean/std-normalize advantages per batch before the surrogate.
    pub normalize_advantages: bool,
    /// Abort when |mean KL| stays above this for `kl_ceiling_patience`
    /// consecutive steps.
    pub kl_ceiling: f64,
    pub kl_ceiling_patience: usize,
    /// Checkpoint cadence used by the training command.
    pub checkpoint_every: usize,
    pub rollout_sampling: SamplingConfig,
    pub reward: RewardConfig,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lam: 0.95,
            alpha: 0.1,
            epsilon: 0.2,
            steps: 1600,
            lr: 1.0e-5,
            batch_size: 32,
            ppo_epochs: 4,
            normalize_advantages: true,
            kl_ceiling: 10.0,
            kl_ceiling_patience: 50,
            checkpoint_every: 200,
            rollout_sampling: SamplingConfig::default(),
            reward: RewardConfig::default(),
            seed: 42,
        }
    }
}

/// Per-step training statistics. `clip_loss` records the surrogate
/// objective value, so `total_loss = -clip_loss + alpha * value_loss`
/// holds exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub step: usize,
    pub total_loss: f64,
    pub clip_loss: f64,
    pub value_loss: f64,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub mean_empathy_reward: f64,
}

impl TrainStats {
    pub const CSV_HEADER: &'static str =
        "step,total_loss,clip_loss,value_loss,mean_reward,mean_kl,mean_empathy_reward";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.total_loss,
            self.clip_loss,
            self.value_loss,
            self.mean_reward,
            self.mean_kl,
            self.mean_empathy_reward
        )
    }
}
