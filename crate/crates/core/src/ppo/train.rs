//! The PPO training loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::batch_loss_tape;
use super::{collect_rollouts_detailed, PpoConfig, PpoError, Rollout, TrainStats};
use crate::corpus::DialogueSample;
use crate::generator::{GeneratorModel, GeneratorRole};
use crate::identifier::JudgeSet;
use crate::nn::{AdamW, Tape};
use crate::seeding::mix_seed;

/// Everything a step observer gets to see; used for stats streaming,
/// audit logs, and periodic checkpoints.
pub struct StepEvent<'a> {
    pub step: usize,
    pub stats: &'a TrainStats,
    pub rollouts: &'a [Rollout],
    pub policy: &'a GeneratorModel,
    pub optimizer: &'a AdamW,
}

/// PPO driver holding the optimizer state and the next step index, so a
/// run can be checkpointed and resumed without perturbing the schedule.
pub struct PpoTrainer {
    cfg: PpoConfig,
    optimizer: AdamW,
    next_step: usize,
    kl_breach_streak: usize,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, policy: &GeneratorModel) -> Self {
        let optimizer = AdamW::for_params(cfg.lr, &policy.all_params());
        Self {
            cfg,
            optimizer,
            next_step: 1,
            kl_breach_streak: 0,
        }
    }

    /// Rebuild a trainer mid-run from checkpointed state. `next_step` is
    /// the 1-based index of the first step still to run.
    pub fn with_state(cfg: PpoConfig, optimizer: AdamW, next_step: usize) -> Self {
        Self {
            cfg,
            optimizer,
            next_step,
            kl_breach_streak: 0,
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn next_step(&self) -> usize {
        self.next_step
    }

    /// Run steps `next_step..=cfg.steps`. With `cfg.steps = 0` the policy
    /// is untouched and the stats are empty.
    pub fn run(
        &mut self,
        policy: &mut GeneratorModel,
        reference: &GeneratorModel,
        judges: Option<&JudgeSet>,
        corpus: &[DialogueSample],
        turn_separator: &str,
        mut on_step: impl FnMut(&StepEvent) -> Result<(), String>,
    ) -> Result<Vec<TrainStats>, PpoError> {
        if self.cfg.steps == 0 {
            return Ok(Vec::new());
        }
        if corpus.is_empty() {
            return Err(PpoError::EmptyBatch);
        }
        if policy.role() != GeneratorRole::Policy {
            return Err(PpoError::WrongRole { expected: "policy" });
        }
        if policy.value_head().is_none() {
            return Err(PpoError::PolicyWithoutValueHead);
        }

        let mut history = Vec::new();
        while self.next_step <= self.cfg.steps {
            let step = self.next_step;
            let step_seed = mix_seed(self.cfg.seed, step as u64);

            // draw the rollout batch (with replacement)
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
            let batch: Vec<DialogueSample> = (0..self.cfg.batch_size)
                .map(|_| corpus[rng.gen_range(0..corpus.len())].clone())
                .collect();

            let mut step_cfg = self.cfg.clone();
            step_cfg.rollout_sampling.seed = mix_seed(step_seed, 1);
            let mut rollouts = collect_rollouts_detailed(
                policy,
                reference,
                judges,
                &batch,
                &step_cfg,
                turn_separator,
            )?;

            if self.cfg.normalize_advantages {
                normalize_advantages(&mut rollouts);
            }

            // PPO epochs over the frozen rollout batch
            let trajectories: Vec<_> =
                rollouts.iter().map(|r| r.trajectory.clone()).collect();
            let mut clip_sum = 0.0;
            let mut value_sum = 0.0;
            for _ in 0..self.cfg.ppo_epochs.max(1) {
                let mut tape = Tape::new();
                let (vars, reg) = batch_loss_tape(
                    &mut tape,
                    policy,
                    &trajectories,
                    self.cfg.epsilon,
                    self.cfg.alpha,
                )?;
                let loss_value = tape.value(vars.loss).item();
                if !loss_value.is_finite() {
                    return Err(PpoError::NonFinite("batch loss"));
                }
                clip_sum += tape.value(vars.clip_objective).item();
                value_sum += tape.value(vars.value_loss).item();
                let grads = tape.gradients_for(vars.loss, &reg.param_vars());
                let mut params = policy.all_params_mut();
                self.optimizer.step(&mut params, &grads);
            }
            let epochs = self.cfg.ppo_epochs.max(1) as f64;
            let clip_loss = clip_sum / epochs;
            let value_loss = value_sum / epochs;
            let total_loss = -clip_loss + self.cfg.alpha * value_loss;

            // refresh current-policy fields for observers; the old_*
            // snapshots stay frozen
            for rollout in rollouts.iter_mut() {
                let traj = &mut rollout.trajectory;
                let (lp, vals) = policy.logprobs_and_values(&traj.context, &traj.token_ids)?;
                traj.policy_logprobs = lp;
                traj.values = vals;
            }

            let n = rollouts.len() as f64;
            let mean_reward = rollouts
                .iter()
                .map(|r| r.trajectory.rewards.iter().sum::<f64>())
                .sum::<f64>()
                / n;
            let mean_kl = rollouts
                .iter()
                .map(|r| {
                    r.breakdown.kl_per_token.iter().sum::<f64>()
                        / r.breakdown.kl_per_token.len() as f64
                })
                .sum::<f64>()
                / n;
            let mean_empathy_reward = rollouts
                .iter()
                .map(|r| r.breakdown.empathy_reward)
                .sum::<f64>()
                / n;

            let stats = TrainStats {
                step,
                total_loss,
                clip_loss,
                value_loss,
                mean_reward,
                mean_kl,
                mean_empathy_reward,
            };

            if mean_kl.abs() > self.cfg.kl_ceiling {
                self.kl_breach_streak += 1;
                if self.kl_breach_streak >= self.cfg.kl_ceiling_patience {
                    return Err(PpoError::Diverged {
                        step,
                        mean_kl,
                        streak: self.kl_breach_streak,
                    });
                }
            } else {
                self.kl_breach_streak = 0;
            }

            on_step(&StepEvent {
                step,
                stats: &stats,
                rollouts: &rollouts,
                policy,
                optimizer: &self.optimizer,
            })
            .map_err(PpoError::Callback)?;

            history.push(stats);
            self.next_step += 1;
        }
        Ok(history)
    }
}

fn normalize_advantages(rollouts: &mut [Rollout]) {
    let mut count = 0usize;
    let mut mean = 0.0;
    for r in rollouts.iter() {
        for &a in &r.trajectory.advantages {
            mean += a;
            count += 1;
        }
    }
    if count == 0 {
        return;
    }
    mean /= count as f64;
    let mut var = 0.0;
    for r in rollouts.iter() {
        for &a in &r.trajectory.advantages {
            var += (a - mean) * (a - mean);
        }
    }
    let std = (var / count as f64).sqrt();
    for r in rollouts.iter_mut() {
        let traj = &mut r.trajectory;
        for a in traj.advantages.iter_mut() {
            *a = (*a - mean) / (std + 1e-8);
        }
        // returns stay tied to the *unnormalized* estimate already stored;
        // they were computed at collection time from raw advantages
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Role, Utterance};
    use crate::generator::{Seq2SeqConfig, SamplingConfig};
    use crate::reward::RewardConfig;
    use crate::tokenizer::Vocab;

    fn toy_corpus(n: usize) -> Vec<DialogueSample> {
        (0..n)
            .map(|i| DialogueSample {
                id: format!("s{i}"),
                context: vec![Utterance {
                    role: Role::Speaker,
                    text: if i % 2 == 0 {
                        "today was bad".into()
                    } else {
                        "today was fine".into()
                    },
                }],
                target: "i am sorry to hear that".into(),
            })
            .collect()
    }

    fn toy_policy(seed: u64) -> GeneratorModel {
        let vocab = Vocab::build(["today was bad fine i am sorry to hear that ok"], 50);
        GeneratorModel::new(
            vocab,
            Seq2SeqConfig {
                embed_dim: 6,
                hidden_dim: 6,
                max_context_tokens: 32,
            },
            seed,
        )
    }

    fn small_cfg(steps: usize) -> PpoConfig {
        PpoConfig {
            steps,
            batch_size: 3,
            ppo_epochs: 2,
            lr: 1.0e-3,
            rollout_sampling: SamplingConfig {
                max_steps: 6,
                ..SamplingConfig::default()
            },
            reward: RewardConfig {
                use_empathy: false,
                ..RewardConfig::default()
            },
            ..PpoConfig::default()
        }
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let mut policy = toy_policy(1);
        let reference = policy.clone_as_reference();
        let before = policy.flat_params();
        let mut trainer = PpoTrainer::new(small_cfg(0), &policy);
        let stats = trainer
            .run(&mut policy, &reference, None, &toy_corpus(4), " ", |_| Ok(()))
            .unwrap();
        assert!(stats.is_empty());
        assert_eq!(policy.flat_params(), before);
    }

    #[test]
    fn stats_row_per_step_and_loss_identity() {
        let mut policy = toy_policy(2);
        let reference = policy.clone_as_reference();
        let cfg = small_cfg(3);
        let alpha = cfg.alpha;
        let mut trainer = PpoTrainer::new(cfg, &policy);
        let stats = trainer
            .run(&mut policy, &reference, None, &toy_corpus(4), " ", |_| Ok(()))
            .unwrap();
        assert_eq!(stats.len(), 3);
        for (i, s) in stats.iter().enumerate() {
            assert_eq!(s.step, i + 1);
            assert_eq!(s.total_loss, -s.clip_loss + alpha * s.value_loss);
        }
    }

    #[test]
    fn snapshot_discipline_old_logprobs_frozen() {
        let mut policy = toy_policy(3);
        let reference = policy.clone_as_reference();
        let mut checked = 0usize;
        let mut cfg = small_cfg(3);
        cfg.lr = 5e-3; // move the policy enough that refreshed log-probs differ
        let mut trainer = PpoTrainer::new(cfg, &policy);
        trainer
            .run(&mut policy, &reference, None, &toy_corpus(4), " ", |ev| {
                for r in ev.rollouts {
                    // the reference scored the same tokens under the
                    // sampling-time weights, so a frozen snapshot of an
                    // un-updated policy equals the reference exactly at
                    // step 1; after updates the refreshed logprobs must
                    // move while the snapshot stays put
                    if ev.step == 1 {
                        assert_eq!(
                            r.trajectory.old_policy_logprobs,
                            r.trajectory.reference_logprobs
                        );
                    }
                    assert_ne!(
                        r.trajectory.policy_logprobs, r.trajectory.old_policy_logprobs,
                        "post-update refresh should differ from the frozen snapshot"
                    );
                    checked += 1;
                }
                Ok(())
            })
            .unwrap();
        assert!(checked > 0);
    }

    #[test]
    fn run_is_deterministic_and_resumable() {
        let corpus = toy_corpus(5);

        // one continuous run
        let mut p1 = toy_policy(4);
        let r1 = p1.clone_as_reference();
        let mut t1 = PpoTrainer::new(small_cfg(4), &p1);
        let full = t1.run(&mut p1, &r1, None, &corpus, " ", |_| Ok(())).unwrap();

        // stop after 2 steps, then resume with the saved state
        let mut p2 = toy_policy(4);
        let r2 = p2.clone_as_reference();
        let mut cfg_half = small_cfg(4);
        cfg_half.steps = 2;
        let mut t2 = PpoTrainer::new(cfg_half, &p2);
        let first_half = t2.run(&mut p2, &r2, None, &corpus, " ", |_| Ok(())).unwrap();
        let mut t3 = PpoTrainer::with_state(small_cfg(4), t2.optimizer().clone(), 3);
        let second_half = t3.run(&mut p2, &r2, None, &corpus, " ", |_| Ok(())).unwrap();

        let stitched: Vec<_> = first_half.into_iter().chain(second_half).collect();
        assert_eq!(full, stitched);
        assert_eq!(p1.flat_params(), p2.flat_params());
    }

    #[test]
    fn kl_divergence_guard_aborts() {
        let mut policy = toy_policy(5);
        let reference = policy.clone_as_reference();
        // nudge the policy away from the reference so KL is nonzero, then
        // set the ceiling below it with zero-tolerance patience
        for p in policy.all_params_mut() {
            for x in p.data_mut() {
                *x += 0.8;
            }
        }
        let mut cfg = small_cfg(5);
        cfg.kl_ceiling = 1e-12;
        cfg.kl_ceiling_patience = 2;
        let mut trainer = PpoTrainer::new(cfg, &policy);
        let err = trainer
            .run(&mut policy, &reference, None, &toy_corpus(4), " ", |_| Ok(()))
            .unwrap_err();
        assert!(matches!(err, PpoError::Diverged { .. }));
    }
}
