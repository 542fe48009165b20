//! Sequence-to-sequence dialogue generator.
//!
//! A [`GeneratorModel`] wraps a small encoder-decoder backbone behind one
//! interface: the trainable policy (with an optional token-level value
//! head) and the frozen reference are the same type distinguished by
//! [`GeneratorRole`]. The reference is created by [`GeneratorModel::
//! clone_as_reference`] after supervised fine-tuning and never changes
//! afterwards; policy and reference always share a tokenizer so per-token
//! log-probabilities are comparable.
//!
//! The shipped backbone is a compact recurrent encoder-decoder (mean-pooled
//! context encoding feeding a tanh recurrence). It is deliberately small:
//! desk-scale training, gradient checks against finite differences, and
//! fully deterministic CPU runs. Larger checkpoints of the same family can
//! be trained and reloaded through the checkpoint layout; nothing in the
//! training objectives depends on the backbone's size.

mod backbone;
mod checkpoint;
mod finetune;
mod sampling;

pub use backbone::{Seq2SeqConfig, Seq2SeqParams, TapeSeq2Seq, ValueHead};
pub use finetune::{finetune_mle, FinetuneConfig, FinetuneEpoch};
pub use sampling::{filter_and_draw, SamplingConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{xavier_uniform, Tensor};
use crate::tokenizer::{Vocab, BOS, EOS};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("reference models are frozen and cannot be trained")]
    FrozenReference,
    #[error("model has no value head (reference models carry none)")]
    NoValueHead,
    #[error("context encodes to zero tokens")]
    EmptyContext,
    #[error("token id list is empty")]
    EmptyTokenIds,
    #[error("token id {id} is outside the vocabulary (size {vocab_size})")]
    TokenOutOfVocab { id: usize, vocab_size: usize },
    #[error("sample `{id}` has an empty target")]
    EmptyTarget { id: String },
    #[error("invalid sampling configuration: {0}")]
    InvalidSampling(String),
    #[error("checkpoint error at {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

/// Whether a model is the trainable policy or the frozen reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorRole {
    Policy,
    Reference,
}

/// Encoder-decoder generator with tokenizer, role marker, and an optional
/// value head (policy only).
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    role: GeneratorRole,
    vocab: Vocab,
    cfg: Seq2SeqConfig,
    params: Seq2SeqParams,
    value_head: Option<ValueHead>,
}

impl GeneratorModel {
    /// Randomly initialized policy. The value head starts at zero so early
    /// advantages are reward-driven.
    pub fn new(vocab: Vocab, cfg: Seq2SeqConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        let params = Seq2SeqParams {
            embed: xavier_uniform(&mut rng, v, e),
            w_x: xavier_uniform(&mut rng, e, h),
            w_h: xavier_uniform(&mut rng, h, h),
            w_c: xavier_uniform(&mut rng, e, h),
            b_h: Tensor::zeros(1, h),
            w_out: xavier_uniform(&mut rng, h, v),
            b_out: Tensor::zeros(1, v),
        };
        let value_head = Some(ValueHead {
            w: Tensor::zeros(h, 1),
            b: Tensor::zeros(1, 1),
        });
        Self {
            role: GeneratorRole::Policy,
            vocab,
            cfg,
            params,
            value_head,
        }
    }

    pub fn role(&self) -> GeneratorRole {
        self.role
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Seq2SeqParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Seq2SeqParams {
        &mut self.params
    }

    pub fn value_head(&self) -> Option<&ValueHead> {
        self.value_head.as_ref()
    }

    pub fn value_head_mut(&mut self) -> Option<&mut ValueHead> {
        self.value_head.as_mut()
    }

    /// Backbone parameter tensors, in a fixed order.
    pub fn backbone_params(&self) -> Vec<&Tensor> {
        self.params.tensors()
    }

    /// Backbone plus value-head parameters, in a fixed order.
    pub fn all_params(&self) -> Vec<&Tensor> {
        let mut out = self.params.tensors();
        if let Some(vh) = &self.value_head {
            out.push(&vh.w);
            out.push(&vh.b);
        }
        out
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.params.tensors_mut();
        if let Some(vh) = &mut self.value_head {
            out.push(&mut vh.w);
            out.push(&mut vh.b);
        }
        out
    }

    /// All parameters flattened to one vector (backbone then value head).
    pub fn flat_params(&self) -> Vec<f64> {
        self.all_params()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.all_params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Deep copy with frozen weights, `Reference` role, and no value head.
    pub fn clone_as_reference(&self) -> GeneratorModel {
        GeneratorModel {
            role: GeneratorRole::Reference,
            vocab: self.vocab.clone(),
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            value_head: None,
        }
    }

    fn context_ids(&self, context: &str) -> Result<Vec<usize>, GeneratorError> {
        let ids = crate::tokenizer::truncate_left(
            &self.vocab.encode(context),
            self.cfg.max_context_tokens,
        );
        if ids.is_empty() {
            return Err(GeneratorError::EmptyContext);
        }
        Ok(ids)
    }

    fn check_token_ids(&self, token_ids: &[usize]) -> Result<(), GeneratorError> {
        if token_ids.is_empty() {
            return Err(GeneratorError::EmptyTokenIds);
        }
        for &id in token_ids {
            if id >= self.vocab.len() {
                return Err(GeneratorError::TokenOutOfVocab {
                    id,
                    vocab_size: self.vocab.len(),
                });
            }
        }
        Ok(())
    }

    /// Teacher-forced per-token log-probabilities of `token_ids` given the
    /// context. Their sum is the sequence log-likelihood.
    pub fn logprobs(&self, context: &str, token_ids: &[usize]) -> Result<Vec<f64>, GeneratorError> {
        self.check_token_ids(token_ids)?;
        let ctx_ids = self.context_ids(context)?;
        let ctx = self.params.encode_context(&ctx_ids);
        let mut h = Tensor::zeros(1, self.cfg.hidden_dim);
        let mut prev = BOS;
        let mut out = Vec::with_capacity(token_ids.len());
        for &tok in token_ids {
            h = self.params.step(prev, &h, &ctx);
            let logprob_row = self.params.logits(&h).log_softmax_rows();
            out.push(logprob_row.at(0, tok));
            prev = tok;
        }
        Ok(out)
    }

    /// Token-level state values under teacher forcing: the value head
    /// applied to the decoder state preceding each generated token.
    pub fn values(&self, context: &str, token_ids: &[usize]) -> Result<Vec<f64>, GeneratorError> {
        let head = self.value_head.as_ref().ok_or(GeneratorError::NoValueHead)?;
        self.check_token_ids(token_ids)?;
        let ctx_ids = self.context_ids(context)?;
        let ctx = self.params.encode_context(&ctx_ids);
        let mut h = Tensor::zeros(1, self.cfg.hidden_dim);
        let mut prev = BOS;
        let mut out = Vec::with_capacity(token_ids.len());
        for &tok in token_ids {
            h = self.params.step(prev, &h, &ctx);
            out.push(head.value(&h));
            prev = tok;
        }
        Ok(out)
    }

    /// Log-probabilities and values in one teacher-forced pass.
    pub fn logprobs_and_values(
        &self,
        context: &str,
        token_ids: &[usize],
    ) -> Result<(Vec<f64>, Vec<f64>), GeneratorError> {
        let head = self.value_head.as_ref().ok_or(GeneratorError::NoValueHead)?;
        self.check_token_ids(token_ids)?;
        let ctx_ids = self.context_ids(context)?;
        let ctx = self.params.encode_context(&ctx_ids);
        let mut h = Tensor::zeros(1, self.cfg.hidden_dim);
        let mut prev = BOS;
        let mut lps = Vec::with_capacity(token_ids.len());
        let mut vals = Vec::with_capacity(token_ids.len());
        for &tok in token_ids {
            h = self.params.step(prev, &h, &ctx);
            let logprob_row = self.params.logits(&h).log_softmax_rows();
            lps.push(logprob_row.at(0, tok));
            vals.push(head.value(&h));
            prev = tok;
        }
        Ok((lps, vals))
    }

    /// Autoregressive sampling: temperature, then top-k, then nucleus
    /// filtering, then a categorical draw. Stops at `<eos>` (included in
    /// the returned ids) or after `max_steps` tokens. The first step never
    /// emits `<eos>`, so generated responses are non-empty.
    pub fn sample(
        &self,
        context: &str,
        cfg: &SamplingConfig,
    ) -> Result<(Vec<usize>, String), GeneratorError> {
        cfg.validate()?;
        let ctx_ids = self.context_ids(context)?;
        let ctx = self.params.encode_context(&ctx_ids);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut h = Tensor::zeros(1, self.cfg.hidden_dim);
        let mut prev = BOS;
        let mut token_ids = Vec::new();
        for step in 0..cfg.max_steps {
            h = self.params.step(prev, &h, &ctx);
            let mut logits = self.params.logits(&h).data().to_vec();
            logits[crate::tokenizer::PAD] = f64::NEG_INFINITY;
            logits[BOS] = f64::NEG_INFINITY;
            if step == 0 {
                logits[EOS] = f64::NEG_INFINITY;
            }
            for logit in logits.iter_mut() {
                *logit /= cfg.temperature;
            }
            let tok = filter_and_draw(&logits, cfg.top_k, cfg.top_p, &mut rng);
            token_ids.push(tok);
            if tok == EOS {
                break;
            }
            prev = tok;
        }
        let text = self.vocab.decode(&token_ids);
        Ok((token_ids, text))
    }

    /// Corpus perplexity: exp of the token-level mean negative
    /// log-likelihood of targets (with `<eos>` appended) given rendered
    /// contexts. This is the single definition shared with evaluation.
    pub fn corpus_perplexity(
        &self,
        samples: &[crate::corpus::DialogueSample],
        turn_separator: &str,
    ) -> Result<f64, GeneratorError> {
        if samples.is_empty() {
            return Err(GeneratorError::EmptyCorpus);
        }
        let mut total_nll = 0.0;
        let mut total_tokens = 0usize;
        for sample in samples {
            let context = crate::corpus::render_context(sample, turn_separator);
            let mut target_ids = self.vocab.encode(&sample.target);
            if target_ids.is_empty() {
                return Err(GeneratorError::EmptyTarget {
                    id: sample.id.clone(),
                });
            }
            target_ids.push(EOS);
            let lps = self.logprobs(&context, &target_ids)?;
            total_nll -= lps.iter().sum::<f64>();
            total_tokens += target_ids.len();
        }
        Ok((total_nll / total_tokens as f64).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DialogueSample, Role, Utterance};
    use approx::assert_relative_eq;

    fn tiny_vocab(words: &[&str]) -> Vocab {
        Vocab::build(words.iter().copied(), 100)
    }

    fn tiny_model(words: &[&str], seed: u64) -> GeneratorModel {
        GeneratorModel::new(
            tiny_vocab(words),
            Seq2SeqConfig {
                embed_dim: 4,
                hidden_dim: 4,
                max_context_tokens: 16,
            },
            seed,
        )
    }

    #[test]
    fn uniform_logits_give_log_inverse_vocab() {
        let mut model = tiny_model(&["a b c d e f g"], 1);
        let n = model.flat_params().len();
        model.set_flat_params(&vec![0.0; n]);
        let v = model.vocab().len() as f64;
        let lps = model.logprobs("a b", &[4, 5, 2]).unwrap();
        for lp in lps {
            assert_relative_eq!(lp, -v.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn logprob_sum_is_sequence_log_likelihood() {
        let model = tiny_model(&["x y z w"], 2);
        let ids = vec![4, 5, 2];
        let lps = model.logprobs("x y", &ids).unwrap();
        assert_eq!(lps.len(), ids.len());
        assert!(lps.iter().all(|lp| lp.is_finite() && *lp < 0.0));
    }

    #[test]
    fn hand_set_output_bias_matches_hand_softmax() {
        // Zero every weight, then set the output bias: logits are the bias
        // at every step, so per-token log-probs are b[t] - log(sum exp(b)).
        let mut model = tiny_model(&["u v"], 3);
        let n = model.flat_params().len();
        model.set_flat_params(&vec![0.0; n]);
        let bias = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        model
            .params_mut()
            .b_out
            .data_mut()
            .copy_from_slice(&bias);
        let z: f64 = bias.iter().map(|b| b.exp()).sum::<f64>().ln();
        let lps = model.logprobs("u", &[4, 5]).unwrap();
        assert_relative_eq!(lps[0], 0.5 - z, epsilon = 1e-12);
        assert_relative_eq!(lps[1], 0.6 - z, epsilon = 1e-12);
    }

    #[test]
    fn out_of_vocab_and_empty_ids_error() {
        let model = tiny_model(&["a"], 4);
        assert!(matches!(
            model.logprobs("a", &[999]),
            Err(GeneratorError::TokenOutOfVocab { .. })
        ));
        assert!(matches!(
            model.logprobs("a", &[]),
            Err(GeneratorError::EmptyTokenIds)
        ));
    }

    #[test]
    fn zero_value_head_gives_zero_values() {
        let model = tiny_model(&["a b c"], 5);
        let vals = model.values("a", &[4, 5, 2]).unwrap();
        assert_eq!(vals, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_set_value_head_doubles_hidden_state() {
        // 1-dim model, all weights zero except the hidden bias: every
        // hidden state is tanh(b) = 0.5, and a head weight of 2.0 makes
        // every value exactly 1.0 = 2 * 0.5.
        let vocab = tiny_vocab(&["a b"]);
        let mut model = GeneratorModel::new(
            vocab,
            Seq2SeqConfig {
                embed_dim: 1,
                hidden_dim: 1,
                max_context_tokens: 8,
            },
            6,
        );
        let n = model.flat_params().len();
        model.set_flat_params(&vec![0.0; n]);
        model.params_mut().b_h.data_mut()[0] = 0.5f64.atanh();
        model.value_head_mut().unwrap().w.data_mut()[0] = 2.0;
        let vals = model.values("a", &[4, 5, 2]).unwrap();
        for v in vals {
            assert_relative_eq!(v, 2.0 * 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_has_no_value_head_and_matches_policy_logprobs() {
        let model = tiny_model(&["a b c d"], 7);
        let reference = model.clone_as_reference();
        assert_eq!(reference.role(), GeneratorRole::Reference);
        let ids = vec![4, 5, 6, 2];
        let lp_policy = model.logprobs("a b", &ids).unwrap();
        let lp_ref = reference.logprobs("a b", &ids).unwrap();
        assert_eq!(lp_policy, lp_ref);
        assert!(matches!(
            reference.values("a b", &ids),
            Err(GeneratorError::NoValueHead)
        ));
    }

    #[test]
    fn sampling_is_deterministic_under_fixed_seed() {
        let model = tiny_model(&["one two three four five"], 8);
        let cfg = SamplingConfig {
            max_steps: 10,
            seed: 123,
            ..SamplingConfig::default()
        };
        let (ids1, text1) = model.sample("one two", &cfg).unwrap();
        let (ids2, text2) = model.sample("one two", &cfg).unwrap();
        assert_eq!(ids1, ids2);
        assert_eq!(text1, text2);
        assert!(!ids1.is_empty());
    }

    #[test]
    fn greedy_topk1_ignores_seed() {
        let model = tiny_model(&["one two three four"], 9);
        let base = SamplingConfig {
            top_k: 1,
            max_steps: 8,
            ..SamplingConfig::default()
        };
        let (ids1, _) = model
            .sample("one", &SamplingConfig { seed: 1, ..base.clone() })
            .unwrap();
        let (ids2, _) = model
            .sample("one", &SamplingConfig { seed: 999, ..base })
            .unwrap();
        assert_eq!(ids1, ids2);
    }

    #[test]
    fn zero_temperature_is_rejected() {
        let model = tiny_model(&["a"], 10);
        let cfg = SamplingConfig {
            temperature: 0.0,
            ..SamplingConfig::default()
        };
        assert!(matches!(
            model.sample("a", &cfg),
            Err(GeneratorError::InvalidSampling(_))
        ));
    }

    #[test]
    fn sampled_sequences_have_finite_teacher_forced_logprobs() {
        let model = tiny_model(&["red green blue yellow pink"], 11);
        for seed in 0..20 {
            let cfg = SamplingConfig {
                max_steps: 12,
                seed,
                ..SamplingConfig::default()
            };
            let (ids, _) = model.sample("red green", &cfg).unwrap();
            let lps = model.logprobs("red green", &ids).unwrap();
            assert!(lps.iter().all(|lp| lp.is_finite()));
        }
    }

    #[test]
    fn uniform_model_perplexity_equals_vocab_size() {
        // 7 content words + 4 specials = vocab of 11.
        let mut model = tiny_model(&["a b c d e f g"], 12);
        assert_eq!(model.vocab().len(), 11);
        let n = model.flat_params().len();
        model.set_flat_params(&vec![0.0; n]);
        let samples = vec![DialogueSample {
            id: "s".into(),
            context: vec![Utterance {
                role: Role::Speaker,
                text: "a b".into(),
            }],
            target: "c d e".into(),
        }];
        let ppl = model.corpus_perplexity(&samples, " ").unwrap();
        assert_relative_eq!(ppl, 11.0, epsilon = 1e-3);
    }
}
