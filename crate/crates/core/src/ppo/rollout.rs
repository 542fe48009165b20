//! Rollout collection: sample responses, score them under policy and
//! reference, compute rewards and advantages.

use std::collections::BTreeMap;

use super::{gae, PpoConfig, PpoError, Trajectory};
use crate::corpus::{render_context, DialogueSample, Mechanism};
use crate::generator::{GeneratorModel, GeneratorRole};
use crate::identifier::JudgeSet;
use crate::reward::{trajectory_reward, MechanismAssessment, RewardBreakdown};
use crate::seeding::mix_seed;

/// A trajectory together with its reward breakdown and, when identifiers
/// ran, the per-mechanism audit assessment.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub breakdown: RewardBreakdown,
    pub assessment: Option<BTreeMap<Mechanism, MechanismAssessment>>,
}

/// Collect one trajectory per sample. Old log-probs and values snapshot
/// the sampling-time policy; per-sample sampling seeds derive from the
/// configured rollout seed and the sample's position in the batch.
pub fn collect_rollouts_detailed(
    policy: &GeneratorModel,
    reference: &GeneratorModel,
    judges: Option<&JudgeSet>,
    samples: &[DialogueSample],
    cfg: &PpoConfig,
    turn_separator: &str,
) -> Result<Vec<Rollout>, PpoError> {
    if samples.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    if policy.role() != GeneratorRole::Policy {
        return Err(PpoError::WrongRole { expected: "policy" });
    }
    if reference.role() != GeneratorRole::Reference {
        return Err(PpoError::WrongRole {
            expected: "reference",
        });
    }
    if policy.value_head().is_none() {
        return Err(PpoError::PolicyWithoutValueHead);
    }

    let mut rollouts = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let context = render_context(sample, turn_separator);
        let sampling = cfg
            .rollout_sampling
            .with_seed(mix_seed(cfg.rollout_sampling.seed, i as u64));
        let (token_ids, generated) = policy.sample(&context, &sampling)?;
        let (policy_lp, values) = policy.logprobs_and_values(&context, &token_ids)?;
        let reference_lp = reference.logprobs(&context, &token_ids)?;
        let (breakdown, assessment) = trajectory_reward(
            &context,
            &generated,
            &sample.target,
            judges,
            &policy_lp,
            &reference_lp,
            &cfg.reward,
        )?;
        let (advantages, returns) =
            gae(&breakdown.reward_vector, &values, cfg.gamma, cfg.lam)?;
        rollouts.push(Rollout {
            trajectory: Trajectory {
                sample_id: sample.id.clone(),
                context,
                target: sample.target.clone(),
                generated,
                token_ids,
                policy_logprobs: policy_lp.clone(),
                reference_logprobs: reference_lp,
                old_policy_logprobs: policy_lp,
                values: values.clone(),
                old_values: values,
                rewards: breakdown.reward_vector.clone(),
                advantages,
                returns,
            },
            breakdown,
            assessment,
        });
    }
    Ok(rollouts)
}

/// Trajectories only; see [`collect_rollouts_detailed`].
pub fn collect_rollouts(
    policy: &GeneratorModel,
    reference: &GeneratorModel,
    judges: Option<&JudgeSet>,
    samples: &[DialogueSample],
    cfg: &PpoConfig,
    turn_separator: &str,
) -> Result<Vec<Trajectory>, PpoError> {
    Ok(
        collect_rollouts_detailed(policy, reference, judges, samples, cfg, turn_separator)?
            .into_iter()
            .map(|r| r.trajectory)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Role, Utterance};
    use crate::generator::Seq2SeqConfig;
    use crate::reward::RewardConfig;
    use crate::tokenizer::Vocab;

    fn toy_samples(n: usize) -> Vec<DialogueSample> {
        (0..n)
            .map(|i| DialogueSample {
                id: format!("s{i}"),
                context: vec![Utterance {
                    role: Role::Speaker,
                    text: "my day was rough".into(),
                }],
                target: "i am sorry".into(),
            })
            .collect()
    }

    fn toy_policy() -> GeneratorModel {
        let vocab = Vocab::build(["my day was rough i am sorry ok fine"], 50);
        GeneratorModel::new(
            vocab,
            Seq2SeqConfig {
                embed_dim: 6,
                hidden_dim: 6,
                max_context_tokens: 32,
            },
            17,
        )
    }

    fn empathy_off_cfg() -> PpoConfig {
        PpoConfig {
            batch_size: 4,
            reward: RewardConfig {
                use_empathy: false,
                ..RewardConfig::default()
            },
            ..PpoConfig::default()
        }
    }

    #[test]
    fn identical_policy_and_reference_give_zero_rewards() {
        let policy = toy_policy();
        let reference = policy.clone_as_reference();
        let cfg = empathy_off_cfg();
        let rollouts =
            collect_rollouts_detailed(&policy, &reference, None, &toy_samples(4), &cfg, " ")
                .unwrap();
        assert_eq!(rollouts.len(), 4);
        for r in &rollouts {
            assert!(r.trajectory.rewards.iter().all(|&x| x == 0.0));
            assert!(r.breakdown.kl_per_token.iter().all(|&x| x == 0.0));
            // zero rewards against the zero-initialized value head: GAE of
            // zeros is zero
            assert!(r.trajectory.advantages.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn shape_contract_holds() {
        let policy = toy_policy();
        let reference = policy.clone_as_reference();
        let cfg = empathy_off_cfg();
        let samples = toy_samples(3);
        let rollouts =
            collect_rollouts(&policy, &reference, None, &samples, &cfg, " ").unwrap();
        assert_eq!(rollouts.len(), samples.len());
        for t in &rollouts {
            let len = t.token_ids.len();
            assert!(len >= 1);
            assert!(len <= cfg.rollout_sampling.max_steps);
            t.validate_for_update().unwrap();
        }
    }

    #[test]
    fn fixed_seed_reproduces_trajectories() {
        let policy = toy_policy();
        let reference = policy.clone_as_reference();
        let cfg = empathy_off_cfg();
        let samples = toy_samples(3);
        let a = collect_rollouts(&policy, &reference, None, &samples, &cfg, " ").unwrap();
        let b = collect_rollouts(&policy, &reference, None, &samples, &cfg, " ").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_errors() {
        let policy = toy_policy();
        let reference = policy.clone_as_reference();
        assert!(matches!(
            collect_rollouts(&policy, &reference, None, &[], &empathy_off_cfg(), " "),
            Err(PpoError::EmptyBatch)
        ));
    }

    #[test]
    fn role_guards() {
        let policy = toy_policy();
        let reference = policy.clone_as_reference();
        let samples = toy_samples(1);
        let cfg = empathy_off_cfg();
        assert!(matches!(
            collect_rollouts(&policy, &policy, None, &samples, &cfg, " "),
            Err(PpoError::WrongRole { .. })
        ));
        assert!(matches!(
            collect_rollouts(&reference, &reference, None, &samples, &cfg, " "),
            Err(PpoError::WrongRole { .. })
        ));
    }
}
