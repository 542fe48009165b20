//! Reward assembly: a terminal empathy reward from the three identifiers
//! plus a per-token KL penalty anchoring the policy to the reference.
//!
//! For a generated response of length T the reward vector is
//! `r_t = -beta * kl_t` for `t < T` and
//! `r_T = empathy_reward - beta * kl_T`; the empathy reward exists only
//! once the response is complete, so it never appears before the final
//! position. The per-token KL penalty is the log-ratio of policy to
//! reference probability evaluated at the sampled token (the single-sample
//! estimate); the end-of-sequence token carries a KL term like any other
//! position.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmpathyLevel, Mechanism};
use crate::identifier::{IdentifierError, JudgeSet};

/// Probability floor before taking logs; identifiers can emit numerically
/// zero classes.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("log-prob lists differ in length: policy {policy} vs reference {reference}")]
    LengthMismatch { policy: usize, reference: usize },
    #[error("empathy loss must be non-negative, got {0}")]
    NegativeLoss(f64),
    #[error("reward vector requires at least one KL entry")]
    EmptyKl,
    #[error("empathy reward requested but no judges were provided")]
    MissingJudges,
    #[error(transparent)]
    Identifier(#[from] IdentifierError),
}

/// Reward-shaping coefficients and the two ablation switches
/// (`use_kl = false` removes the KL penalty term, `use_empathy = false`
/// removes the empathy reward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub beta: f64,
    pub use_empathy: bool,
    pub use_kl: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            use_empathy: true,
            use_kl: true,
        }
    }
}

/// Everything that went into one trajectory's reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// `exp(-sum of per-mechanism cross-entropies)`, always in (0, 1].
    pub empathy_reward: f64,
    pub per_mechanism_ce: BTreeMap<Mechanism, f64>,
    pub kl_per_token: Vec<f64>,
    pub reward_vector: Vec<f64>,
}

/// Per-mechanism labels and cross-entropies for the audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismAssessment {
    pub gold: EmpathyLevel,
    pub predicted: EmpathyLevel,
    pub cross_entropy: f64,
}

/// Empathy-level loss for one `(context, generated, target)` triple: for
/// each mechanism the identifier labels the target (gold) and distributes
/// probability over the generated response; the cross-entropy of that
/// distribution against the gold label is summed over mechanisms.
pub fn empathy_assessment(
    context: &str,
    generated: &str,
    target: &str,
    judges: &JudgeSet,
) -> Result<BTreeMap<Mechanism, MechanismAssessment>, RewardError> {
    let mut out = BTreeMap::new();
    for judge in judges.iter() {
        let gold_judgment = judge.judge(context, target)?;
        let predicted_judgment = judge.judge(context, generated)?;
        let gold = gold_judgment.label;
        let mut p = predicted_judgment.probs[gold.index()];
        if p < PROB_FLOOR {
            log::warn!(
                "{}: predicted probability {p:.3e} for gold level clamped to {PROB_FLOOR:.0e}",
                judge.mechanism()
            );
            p = PROB_FLOOR;
        }
        out.insert(
            judge.mechanism(),
            MechanismAssessment {
                gold,
                predicted: predicted_judgment.label,
                cross_entropy: -p.ln(),
            },
        );
    }
    Ok(out)
}

/// Summed cross-entropy loss and its per-mechanism parts.
pub fn empathy_loss(
    context: &str,
    generated: &str,
    target: &str,
    judges: &JudgeSet,
) -> Result<(f64, BTreeMap<Mechanism, f64>), RewardError> {
    let assessment = empathy_assessment(context, generated, target, judges)?;
    let per_mechanism: BTreeMap<Mechanism, f64> = assessment
        .into_iter()
        .map(|(m, a)| (m, a.cross_entropy))
        .collect();
    let loss = per_mechanism.values().sum();
    Ok((loss, per_mechanism))
}

/// `exp(-loss)`: strictly decreasing in the loss, range (0, 1].
pub fn empathy_reward(loss: f64) -> Result<f64, RewardError> {
    if loss < 0.0 {
        return Err(RewardError::NegativeLoss(loss));
    }
    Ok((-loss).exp())
}

/// Per-token KL penalty: `log pi(token) - log rho(token)` elementwise.
pub fn kl_penalty(
    policy_logprobs: &[f64],
    reference_logprobs: &[f64],
) -> Result<Vec<f64>, RewardError> {
    if policy_logprobs.len() != reference_logprobs.len() {
        return Err(RewardError::LengthMismatch {
            policy: policy_logprobs.len(),
            reference: reference_logprobs.len(),
        });
    }
    Ok(policy_logprobs
        .iter()
        .zip(reference_logprobs)
        .map(|(p, r)| p - r)
        .collect())
}

/// Assemble the reward vector from the KL sequence and the terminal
/// empathy reward, honoring the ablation switches.
pub fn assemble_reward(
    kl: &[f64],
    empathy: f64,
    cfg: &RewardConfig,
) -> Result<Vec<f64>, RewardError> {
    if kl.is_empty() {
        return Err(RewardError::EmptyKl);
    }
    let beta = if cfg.use_kl { cfg.beta } else { 0.0 };
    let mut rewards: Vec<f64> = kl.iter().map(|&k| -beta * k).collect();
    if cfg.use_empathy {
        *rewards.last_mut().expect("non-empty") += empathy;
    }
    Ok(rewards)
}

/// Full reward computation for one trajectory. `judges` may be omitted
/// only when the empathy reward is ablated; the breakdown then records an
/// empty cross-entropy map and the neutral empathy reward `exp(-0) = 1`.
pub fn trajectory_reward(
    context: &str,
    generated: &str,
    target: &str,
    judges: Option<&JudgeSet>,
    policy_logprobs: &[f64],
    reference_logprobs: &[f64],
    cfg: &RewardConfig,
) -> Result<(RewardBreakdown, Option<BTreeMap<Mechanism, MechanismAssessment>>), RewardError> {
    let kl = kl_penalty(policy_logprobs, reference_logprobs)?;
    let (assessment, per_mechanism_ce, loss) = match judges {
        Some(judges) => {
            let assessment = empathy_assessment(context, generated, target, judges)?;
            let ce: BTreeMap<Mechanism, f64> = assessment
                .iter()
                .map(|(&m, a)| (m, a.cross_entropy))
                .collect();
            let loss = ce.values().sum::<f64>();
            (Some(assessment), ce, loss)
        }
        None if !cfg.use_empathy => (None, BTreeMap::new(), 0.0),
        None => return Err(RewardError::MissingJudges),
    };
    let empathy = empathy_reward(loss)?;
    let reward_vector = assemble_reward(&kl, empathy, cfg)?;
    Ok((
        RewardBreakdown {
            empathy_reward: empathy,
            per_mechanism_ce,
            kl_per_token: kl,
            reward_vector,
        },
        assessment,
    ))
}

/// One line of the reward audit log (structured records for the
/// training-curve plots).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardAuditRecord {
    pub id: String,
    pub assessment: Option<BTreeMap<Mechanism, MechanismAssessment>>,
    pub empathy_reward: f64,
    pub mean_kl: f64,
    pub total_reward: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Mechanism;
    use crate::identifier::{EmpathyJudge, EmpathyJudgment};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    struct FixedProbs(Mechanism, [f64; 3]);
    impl EmpathyJudge for FixedProbs {
        fn mechanism(&self) -> Mechanism {
            self.0
        }
        fn judge(&self, _: &str, _: &str) -> Result<EmpathyJudgment, IdentifierError> {
            Ok(EmpathyJudgment::from_probs(self.0, self.1))
        }
    }

    fn fixed_judges(probs: [f64; 3]) -> JudgeSet {
        JudgeSet::new([
            Box::new(FixedProbs(Mechanism::EmotionalReaction, probs)),
            Box::new(FixedProbs(Mechanism::Interpretation, probs)),
            Box::new(FixedProbs(Mechanism::Exploration, probs)),
        ])
        .unwrap()
    }

    #[test]
    fn uniform_identifiers_give_three_ln_three() {
        let judges = fixed_judges([1.0 / 3.0; 3]);
        let (loss, per) = empathy_loss("c", "g", "t", &judges).unwrap();
        assert_relative_eq!(loss, 3.0 * 3.0f64.ln(), epsilon = 1e-12);
        for ce in per.values() {
            assert_relative_eq!(*ce, 3.0f64.ln(), epsilon = 1e-12);
        }
        assert_relative_eq!(
            empathy_reward(loss).unwrap(),
            1.0 / 27.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn hand_set_probs_give_hand_computed_loss() {
        // gold = No (argmax of 0.7), CE = -ln 0.7 per mechanism
        let judges = fixed_judges([0.7, 0.2, 0.1]);
        let (loss, _) = empathy_loss("c", "g", "t", &judges).unwrap();
        assert_relative_eq!(loss, 3.0 * -(0.7f64.ln()), epsilon = 1e-9);
        assert_relative_eq!(loss, 1.0700, epsilon = 1e-4);
    }

    #[test]
    fn self_judging_bounds_cross_entropy() {
        // generated == target goes through the same judge, so predicted
        // argmax equals gold and each CE is at most ln 3
        for probs in [[0.5, 0.3, 0.2], [0.34, 0.33, 0.33], [0.9, 0.05, 0.05]] {
            let judges = fixed_judges(probs);
            let (_, per) = empathy_loss("c", "same", "same", &judges).unwrap();
            for ce in per.values() {
                assert!(*ce <= 3.0f64.ln() + 1e-12);
            }
        }
    }

    #[test]
    fn empathy_reward_bounds_and_errors() {
        assert_eq!(empathy_reward(0.0).unwrap(), 1.0);
        assert!(matches!(
            empathy_reward(-0.1),
            Err(RewardError::NegativeLoss(_))
        ));
        // monotone decreasing toward zero
        let mut prev = 1.0;
        for loss in [0.5, 1.0, 5.0, 20.0, 200.0] {
            let r = empathy_reward(loss).unwrap();
            assert!(r < prev && r > 0.0);
            prev = r;
        }
    }

    #[test]
    fn kl_penalty_hand_cases() {
        assert_eq!(
            kl_penalty(&[-1.0, -2.0], &[-1.0, -2.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            kl_penalty(&[-0.5, -1.5], &[-1.0, -2.0]).unwrap(),
            vec![0.5, 0.5]
        );
        let kl = kl_penalty(&[-1.0, -2.0], &[-1.5, -2.0]).unwrap();
        assert_relative_eq!(kl[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(kl[1], 0.0, epsilon = 1e-12);
        assert!(matches!(
            kl_penalty(&[0.0], &[0.0, 0.0]),
            Err(RewardError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn assemble_reward_zero_kl_case() {
        let cfg = RewardConfig::default();
        let r = assemble_reward(&[0.0, 0.0, 0.0], 0.5, &cfg).unwrap();
        assert_eq!(r, vec![0.0, 0.0, 0.5]);
    }

    #[test]
    fn assemble_reward_hand_case() {
        let cfg = RewardConfig::default();
        let r = assemble_reward(&[0.5, -0.5], 0.25, &cfg).unwrap();
        assert_relative_eq!(r[0], -0.1, epsilon = 1e-12);
        assert_relative_eq!(r[1], 0.35, epsilon = 1e-12);
    }

    #[test]
    fn ablation_switches_zero_their_component() {
        let no_empathy = RewardConfig {
            use_empathy: false,
            ..RewardConfig::default()
        };
        let r = assemble_reward(&[0.5, -0.5], 0.25, &no_empathy).unwrap();
        assert_relative_eq!(r[0], -0.1, epsilon = 1e-12);
        assert_relative_eq!(r[1], 0.1, epsilon = 1e-12);

        let no_kl = RewardConfig {
            use_kl: false,
            ..RewardConfig::default()
        };
        let r = assemble_reward(&[0.5, -0.5], 0.25, &no_kl).unwrap();
        assert_eq!(r, vec![0.0, 0.25]);
    }

    #[test]
    fn single_token_collapses_to_one_entry() {
        let cfg = RewardConfig::default();
        let r = assemble_reward(&[0.5], 0.25, &cfg).unwrap();
        assert_eq!(r.len(), 1);
        assert_relative_eq!(r[0], 0.25 - 0.2 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_kl_errors() {
        assert!(matches!(
            assemble_reward(&[], 0.5, &RewardConfig::default()),
            Err(RewardError::EmptyKl)
        ));
    }

    #[test]
    fn identical_policies_with_empathy_off_give_zero_vector() {
        let lp = vec![-1.2, -0.3, -2.2];
        let cfg = RewardConfig {
            use_empathy: false,
            ..RewardConfig::default()
        };
        let (breakdown, _) =
            trajectory_reward("c", "g", "t", None, &lp, &lp, &cfg).unwrap();
        assert!(breakdown.reward_vector.iter().all(|&r| r == 0.0));
        assert_eq!(breakdown.empathy_reward, 1.0);
    }

    #[test]
    fn missing_judges_with_empathy_on_is_an_error() {
        let lp = vec![-1.0];
        assert!(matches!(
            trajectory_reward("c", "g", "t", None, &lp, &lp, &RewardConfig::default()),
            Err(RewardError::MissingJudges)
        ));
    }

    proptest! {
        /// Only the final position depends on the empathy reward.
        #[test]
        fn empathy_only_touches_last_position(
            kl in proptest::collection::vec(-2.0f64..2.0, 1..10),
            emp1 in 0.0f64..1.0,
            emp2 in 0.0f64..1.0,
        ) {
            let cfg = RewardConfig::default();
            let r1 = assemble_reward(&kl, emp1, &cfg).unwrap();
            let r2 = assemble_reward(&kl, emp2, &cfg).unwrap();
            let t = kl.len();
            for i in 0..t - 1 {
                prop_assert_eq!(r1[i], r2[i]);
            }
            prop_assert!(((r1[t-1] - r2[t-1]) - (emp1 - emp2)).abs() < 1e-12);
        }

        /// The assembled vector is linear in beta for fixed inputs.
        #[test]
        fn reward_is_linear_in_beta(
            kl in proptest::collection::vec(-2.0f64..2.0, 1..10),
            emp in 0.0f64..1.0,
            beta1 in 0.0f64..3.0,
            beta2 in 0.0f64..3.0,
        ) {
            let mk = |beta| RewardConfig { beta, ..RewardConfig::default() };
            let r1 = assemble_reward(&kl, emp, &mk(beta1)).unwrap();
            let r2 = assemble_reward(&kl, emp, &mk(beta2)).unwrap();
            let rm = assemble_reward(&kl, emp, &mk((beta1 + beta2) / 2.0)).unwrap();
            for i in 0..kl.len() {
                prop_assert!(((r1[i] + r2[i]) / 2.0 - rm[i]).abs() < 1e-12);
            }
        }

        /// empathy_reward stays in (0, 1] for every non-negative loss.
        #[test]
        fn empathy_reward_range(loss in 0.0f64..80.0) {
            let r = empathy_reward(loss).unwrap();
            prop_assert!(r > 0.0 && r <= 1.0);
        }
    }
}
