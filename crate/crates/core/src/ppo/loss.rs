//! PPO losses: the clipped surrogate objective, the value-function squared
//! error, and their weighted combination.
//!
//! Each loss exists twice: a pure scalar computation over [`Trajectory`]
//! fields (for tests and statistics) and a tape version that recomputes
//! log-probs and values from the live policy for gradient steps. Both use
//! the same formulas; the gradient check in the acceptance suite ties the
//! tape version to finite differences of its own forward values.

use super::{PpoError, Trajectory};
use crate::generator::{GeneratorModel, TapeSeq2Seq};
use crate::nn::{Tape, Tensor, Var};
use crate::tokenizer::truncate_left;

/// Mean over the batch of `sum_t min(c_t * A_t, clip(c_t, 1 - eps, 1 + eps) * A_t)`
/// with `c_t = exp(policy_logprob_t - old_policy_logprob_t)`.
pub fn clipped_surrogate(trajectories: &[Trajectory], epsilon: f64) -> Result<f64, PpoError> {
    if trajectories.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let mut batch_sum = 0.0;
    for traj in trajectories {
        traj.validate_for_update()?;
        for t in 0..traj.len() {
            let ratio = (traj.policy_logprobs[t] - traj.old_policy_logprobs[t]).exp();
            let adv = traj.advantages[t];
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
            batch_sum += unclipped.min(clipped);
        }
    }
    Ok(batch_sum / trajectories.len() as f64)
}

/// Mean over the batch of `sum_t (V_t - returns_t)^2`.
pub fn value_loss(trajectories: &[Trajectory]) -> Result<f64, PpoError> {
    if trajectories.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let mut batch_sum = 0.0;
    for traj in trajectories {
        traj.validate_for_update()?;
        for t in 0..traj.len() {
            let err = traj.values[t] - traj.returns[t];
            batch_sum += err * err;
        }
    }
    Ok(batch_sum / trajectories.len() as f64)
}

/// `L = -clip_objective + alpha * value_loss`.
pub fn total_loss(clip_objective: f64, vloss: f64, alpha: f64) -> Result<f64, PpoError> {
    if !clip_objective.is_finite() || !vloss.is_finite() || !alpha.is_finite() {
        return Err(PpoError::NonFinite("total_loss inputs"));
    }
    Ok(-clip_objective + alpha * vloss)
}

pub(crate) struct BatchLossVars {
    pub loss: Var,
    pub clip_objective: Var,
    pub value_loss: Var,
}

/// Build the differentiable batch loss on a tape. Advantages, returns, and
/// old log-probs enter as constants; fresh log-probs and values come from
/// the live policy parameters registered on the tape.
pub(crate) fn batch_loss_tape(
    tape: &mut Tape,
    policy: &GeneratorModel,
    trajectories: &[Trajectory],
    epsilon: f64,
    alpha: f64,
) -> Result<(BatchLossVars, TapeSeq2Seq), PpoError> {
    if trajectories.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    if policy.value_head().is_none() {
        return Err(PpoError::PolicyWithoutValueHead);
    }
    let reg = TapeSeq2Seq::register(
        tape,
        policy.params(),
        policy.value_head(),
        policy.config().hidden_dim,
    );
    let mut clip_terms = Vec::with_capacity(trajectories.len());
    let mut value_terms = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        traj.validate_for_update()?;
        let ctx_ids = truncate_left(
            &policy.vocab().encode(&traj.context),
            policy.config().max_context_tokens,
        );
        let (lp_vars, v_vars) = reg.teacher_forced(tape, &ctx_ids, &traj.token_ids, true);
        let mut traj_clip = Vec::with_capacity(traj.len());
        let mut traj_value = Vec::with_capacity(traj.len());
        for t in 0..traj.len() {
            let old = tape.leaf(Tensor::scalar(traj.old_policy_logprobs[t]));
            let diff = tape.sub(lp_vars[t], old);
            let ratio = tape.exp(diff);
            let unclipped = tape.scale(ratio, traj.advantages[t]);
            let bounded = tape.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
            let clipped = tape.scale(bounded, traj.advantages[t]);
            traj_clip.push(tape.min_elem(unclipped, clipped));

            let ret = tape.leaf(Tensor::scalar(traj.returns[t]));
            let err = tape.sub(v_vars[t], ret);
            traj_value.push(tape.mul_elem(err, err));
        }
        clip_terms.push(tape.sum_scalars(&traj_clip));
        value_terms.push(tape.sum_scalars(&traj_value));
    }
    let inv_batch = 1.0 / trajectories.len() as f64;
    let clip_sum = tape.sum_scalars(&clip_terms);
    let clip_objective = tape.scale(clip_sum, inv_batch);
    let value_sum = tape.sum_scalars(&value_terms);
    let vloss = tape.scale(value_sum, inv_batch);
    let neg_clip = tape.scale(clip_objective, -1.0);
    let weighted_v = tape.scale(vloss, alpha);
    let loss = tape.add(neg_clip, weighted_v);
    Ok((
        BatchLossVars {
            loss,
            clip_objective,
            value_loss: vloss,
        },
        reg,
    ))
}

/// Forward-only loss components from the tape path:
/// `(total, clip_objective, value_loss)`.
pub fn policy_loss_components(
    policy: &GeneratorModel,
    trajectories: &[Trajectory],
    epsilon: f64,
    alpha: f64,
) -> Result<(f64, f64, f64), PpoError> {
    let mut tape = Tape::new();
    let (vars, _) = batch_loss_tape(&mut tape, policy, trajectories, epsilon, alpha)?;
    Ok((
        tape.value(vars.loss).item(),
        tape.value(vars.clip_objective).item(),
        tape.value(vars.value_loss).item(),
    ))
}

/// Total loss and its gradient with respect to every policy parameter
/// (ordering matches [`GeneratorModel::all_params`]).
pub fn policy_loss_gradients(
    policy: &GeneratorModel,
    trajectories: &[Trajectory],
    epsilon: f64,
    alpha: f64,
) -> Result<(f64, Vec<Tensor>), PpoError> {
    let mut tape = Tape::new();
    let (vars, reg) = batch_loss_tape(&mut tape, policy, trajectories, epsilon, alpha)?;
    let loss = tape.value(vars.loss).item();
    if !loss.is_finite() {
        return Err(PpoError::NonFinite("batch loss"));
    }
    let grads = tape.gradients_for(vars.loss, &reg.param_vars());
    Ok((loss, grads))
}
