//! Identifier architecture and forward passes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmpathyJudge, EmpathyJudgment, IdentifierError};
use crate::corpus::Mechanism;
use crate::nn::{xavier_uniform, Tape, Tensor, Var};
use crate::tokenizer::{truncate_left, truncate_right, Vocab};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Architecture settings kept with the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifierConfig {
    pub embed_dim: usize,
    /// Per-side token budget. Context truncates from the left (most recent
    /// turns kept), response from the right.
    pub max_tokens_per_side: usize,
    /// Apply row normalization after the residual connection. Off by
    /// default; the switch is recorded with every run configuration.
    pub residual_layer_norm: bool,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            max_tokens_per_side: 256,
            residual_layer_norm: false,
        }
    }
}

/// Identifier weights: two independent encoders (separate embedding
/// tables), single-head cross-attention, and a 3-way linear classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifierParams {
    pub e_ctx: Tensor,
    pub e_rsp: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub w_cls: Tensor,
    pub b_cls: Tensor,
}

impl IdentifierParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.e_ctx, &self.e_rsp, &self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.w_cls,
            &self.b_cls,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.e_ctx,
            &mut self.e_rsp,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.w_cls,
            &mut self.b_cls,
        ]
    }
}

/// One trained empathy identifier.
#[derive(Clone, Debug)]
pub struct IdentifierModel {
    pub mechanism: Mechanism,
    vocab: Vocab,
    cfg: IdentifierConfig,
    params: IdentifierParams,
}

impl IdentifierModel {
    /// Randomly initialized model. The two encoders share architecture but
    /// never share weights; their tables are drawn independently.
    pub fn new(mechanism: Mechanism, vocab: Vocab, cfg: IdentifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let d = cfg.embed_dim;
        let params = IdentifierParams {
            e_ctx: xavier_uniform(&mut rng, v, d),
            e_rsp: xavier_uniform(&mut rng, v, d),
            w_q: xavier_uniform(&mut rng, d, d),
            w_k: xavier_uniform(&mut rng, d, d),
            w_v: xavier_uniform(&mut rng, d, d),
            w_o: xavier_uniform(&mut rng, d, d),
            w_cls: xavier_uniform(&mut rng, d, 3),
            b_cls: Tensor::zeros(1, 3),
        };
        Self {
            mechanism,
            vocab,
            cfg,
            params,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &IdentifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &IdentifierParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IdentifierParams {
        &mut self.params
    }

    pub(crate) fn encode_sides(
        &self,
        context: &str,
        response: &str,
    ) -> Result<(Vec<usize>, Vec<usize>), IdentifierError> {
        let ctx_ids = truncate_left(&self.vocab.encode(context), self.cfg.max_tokens_per_side);
        if ctx_ids.is_empty() {
            return Err(IdentifierError::EmptyInput { side: "context" });
        }
        let rsp_ids = truncate_right(&self.vocab.encode(response), self.cfg.max_tokens_per_side);
        if rsp_ids.is_empty() {
            return Err(IdentifierError::EmptyInput { side: "response" });
        }
        Ok((ctx_ids, rsp_ids))
    }

    /// Forward pass: logits and softmax probabilities for the three levels.
    ///
    /// Order is fixed: encode both sides separately, cross-attend with the
    /// encoded response as query and the encoded context as key/value, add
    /// the residual from the encoded response, max-pool over the response
    /// axis, then classify.
    pub fn forward(
        &self,
        context: &str,
        response: &str,
    ) -> Result<([f64; 3], [f64; 3]), IdentifierError> {
        let (ctx_ids, rsp_ids) = self.encode_sides(context, response)?;
        let p = &self.params;
        let h_ctx = p.e_ctx.gather_rows(&ctx_ids);
        let h_rsp = p.e_rsp.gather_rows(&rsp_ids);
        let q = h_rsp.matmul(&p.w_q);
        let k = h_ctx.matmul(&p.w_k);
        let v = h_ctx.matmul(&p.w_v);
        let scale = 1.0 / (self.cfg.embed_dim as f64).sqrt();
        let scores = q.matmul(&k.transpose()).scale(scale);
        let attn = scores.softmax_rows();
        let mixed = attn.matmul(&v).matmul(&p.w_o);
        let mut joint = mixed.add(&h_rsp);
        if self.cfg.residual_layer_norm {
            joint = joint.layer_norm_rows(LAYER_NORM_EPS);
        }
        let (pooled, _) = joint.max_pool_rows();
        let logits_t = pooled.matmul(&p.w_cls).add(&p.b_cls);
        let probs_t = logits_t.softmax_rows();
        let logits = [logits_t.at(0, 0), logits_t.at(0, 1), logits_t.at(0, 2)];
        let probs = [probs_t.at(0, 0), probs_t.at(0, 1), probs_t.at(0, 2)];
        Ok((logits, probs))
    }

    /// Same forward on a tape; returns the `(1, 3)` logits var.
    pub(crate) fn forward_tape(
        &self,
        tape: &mut Tape,
        reg: &TapeIdentifier,
        ctx_ids: &[usize],
        rsp_ids: &[usize],
    ) -> Var {
        let h_ctx = tape.gather_rows(reg.e_ctx, ctx_ids);
        let h_rsp = tape.gather_rows(reg.e_rsp, rsp_ids);
        let q = tape.matmul(h_rsp, reg.w_q);
        let k = tape.matmul(h_ctx, reg.w_k);
        let v = tape.matmul(h_ctx, reg.w_v);
        let kt = tape.transpose(k);
        let raw_scores = tape.matmul(q, kt);
        let scale = 1.0 / (self.cfg.embed_dim as f64).sqrt();
        let scores = tape.scale(raw_scores, scale);
        let attn = tape.softmax_rows(scores);
        let av = tape.matmul(attn, v);
        let mixed = tape.matmul(av, reg.w_o);
        let mut joint = tape.add(mixed, h_rsp);
        if self.cfg.residual_layer_norm {
            joint = tape.layer_norm_rows(joint, LAYER_NORM_EPS);
        }
        let pooled = tape.max_pool_rows(joint);
        let raw_logits = tape.matmul(pooled, reg.w_cls);
        tape.add(raw_logits, reg.b_cls)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), IdentifierError> {
        let ck = IdentifierCheckpoint {
            mechanism: self.mechanism,
            cfg: self.cfg.clone(),
            params: self.params.clone(),
        };
        std::fs::create_dir_all(dir).map_err(|e| IdentifierError::Checkpoint {
            path: dir.display().to_string(),
            reason: e.to_string(),
        })?;
        std::fs::write(
            dir.join("weights.json"),
            serde_json::to_string(&ck).expect("checkpoint serializes"),
        )
        .map_err(|e| IdentifierError::Checkpoint {
            path: dir.display().to_string(),
            reason: e.to_string(),
        })?;
        self.vocab
            .save(&dir.join("tokenizer.json"))
            .map_err(|e| IdentifierError::Checkpoint {
                path: dir.display().to_string(),
                reason: e.to_string(),
            })
    }

    pub fn load_checkpoint(dir: &Path) -> Result<IdentifierModel, IdentifierError> {
        let weights_path = dir.join("weights.json");
        let raw = std::fs::read_to_string(&weights_path).map_err(|e| {
            IdentifierError::Checkpoint {
                path: weights_path.display().to_string(),
                reason: e.to_string(),
            }
        })?;
        let ck: IdentifierCheckpoint =
            serde_json::from_str(&raw).map_err(|e| IdentifierError::Checkpoint {
                path: weights_path.display().to_string(),
                reason: e.to_string(),
            })?;
        let vocab = Vocab::load(&dir.join("tokenizer.json")).map_err(|e| {
            IdentifierError::Checkpoint {
                path: dir.display().to_string(),
                reason: e.to_string(),
            }
        })?;
        Ok(IdentifierModel {
            mechanism: ck.mechanism,
            vocab,
            cfg: ck.cfg,
            params: ck.params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct IdentifierCheckpoint {
    mechanism: Mechanism,
    cfg: IdentifierConfig,
    params: IdentifierParams,
}

/// Identifier parameters registered as tape leaves.
pub(crate) struct TapeIdentifier {
    pub e_ctx: Var,
    pub e_rsp: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub w_cls: Var,
    pub b_cls: Var,
}

impl TapeIdentifier {
    pub fn register(tape: &mut Tape, params: &IdentifierParams) -> Self {
        Self {
            e_ctx: tape.leaf(params.e_ctx.clone()),
            e_rsp: tape.leaf(params.e_rsp.clone()),
            w_q: tape.leaf(params.w_q.clone()),
            w_k: tape.leaf(params.w_k.clone()),
            w_v: tape.leaf(params.w_v.clone()),
            w_o: tape.leaf(params.w_o.clone()),
            w_cls: tape.leaf(params.w_cls.clone()),
            b_cls: tape.leaf(params.b_cls.clone()),
        }
    }

    pub fn param_vars(&self) -> Vec<Var> {
        vec![
            self.e_ctx, self.e_rsp, self.w_q, self.w_k, self.w_v, self.w_o, self.w_cls, self.b_cls,
        ]
    }
}

impl EmpathyJudge for IdentifierModel {
    fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    fn judge(&self, context: &str, response: &str) -> Result<EmpathyJudgment, IdentifierError> {
        let (_, probs) = self.forward(context, response)?;
        Ok(EmpathyJudgment::from_probs(self.mechanism, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmpathyLevel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model_with_vocab(words: &str, seed: u64) -> IdentifierModel {
        IdentifierModel::new(
            Mechanism::EmotionalReaction,
            Vocab::build([words], 100),
            IdentifierConfig {
                embed_dim: 8,
                ..IdentifierConfig::default()
            },
            seed,
        )
    }

    #[test]
    fn zeroed_classifier_gives_uniform_probs() {
        let mut model = model_with_vocab("a b c d", 1);
        for t in model.params_mut().tensors_mut() {
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        let (logits, probs) = model.forward("a b", "c d").unwrap();
        assert_eq!(logits, [0.0, 0.0, 0.0]);
        for p in probs {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
        // degenerate model labels everything No via the tie-break
        let judgment = model.judge("a b", "c d").unwrap();
        assert_eq!(judgment.label, EmpathyLevel::No);
    }

    #[test]
    fn hand_computed_forward_single_token_response() {
        // 2-dim toy configuration with identity attention weights. A
        // single-token response makes max-pool the identity, so:
        //   H_c = [1, 0], H_r = [0, 1]
        //   Q = [0, 1], K = [1, 0], V = [1, 0]
        //   scores = 0 -> softmax over one context token = [1]
        //   attended = V = [1, 0], residual adds H_r -> Z = [1, 1]
        //   logits = Z * W_cls = [5, 7, 9]
        let mut model = IdentifierModel::new(
            Mechanism::EmotionalReaction,
            Vocab::build(["ctxword rspword"], 10),
            IdentifierConfig {
                embed_dim: 2,
                ..IdentifierConfig::default()
            },
            2,
        );
        let ctx_id = model.vocab().id("ctxword").unwrap();
        let rsp_id = model.vocab().id("rspword").unwrap();
        {
            let p = model.params_mut();
            for t in p.tensors_mut() {
                for x in t.data_mut() {
                    *x = 0.0;
                }
            }
            *p.e_ctx.at_mut(ctx_id, 0) = 1.0;
            *p.e_rsp.at_mut(rsp_id, 1) = 1.0;
            for i in 0..2 {
                *p.w_q.at_mut(i, i) = 1.0;
                *p.w_k.at_mut(i, i) = 1.0;
                *p.w_v.at_mut(i, i) = 1.0;
                *p.w_o.at_mut(i, i) = 1.0;
            }
            p.w_cls
                .data_mut()
                .copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        }
        let (logits, probs) = model.forward("ctxword", "rspword").unwrap();
        assert_relative_eq!(logits[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(logits[1], 7.0, epsilon = 1e-12);
        assert_relative_eq!(logits[2], 9.0, epsilon = 1e-12);
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for i in 0..3 {
            assert_relative_eq!(probs[i], logits[i].exp() / z, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_inputs_error() {
        let model = model_with_vocab("a", 3);
        assert!(matches!(
            model.forward("", "a"),
            Err(IdentifierError::EmptyInput { side: "context" })
        ));
        assert!(matches!(
            model.forward("a", "   "),
            Err(IdentifierError::EmptyInput { side: "response" })
        ));
    }

    #[test]
    fn judge_is_deterministic() {
        let model = model_with_vocab("x y z w v", 4);
        let a = model.judge("x y", "z w v").unwrap();
        let b = model.judge("x y", "z w v").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn judge_batch_matches_sequential_and_preserves_order() {
        let model = model_with_vocab("p q r s t u", 5);
        let items: Vec<(String, String)> = vec![
            ("p q".into(), "r s".into()),
            ("q".into(), "t u".into()),
            ("p q r".into(), "u".into()),
        ];
        let batch = model.judge_batch(&items).unwrap();
        for (item, out) in items.iter().zip(&batch) {
            let single = model.judge(&item.0, &item.1).unwrap();
            for i in 0..3 {
                assert!((single.probs[i] - out.probs[i]).abs() < 1e-5);
            }
            assert_eq!(single.label, out.label);
        }
        // permutation equivariance
        let mut shuffled = items.clone();
        shuffled.reverse();
        let batch_rev = model.judge_batch(&shuffled).unwrap();
        for (a, b) in batch.iter().zip(batch_rev.iter().rev()) {
            assert_eq!(a, b);
        }
        // degenerate batch
        assert!(model.judge_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = model_with_vocab("m n o p", 6);
        let dir = tempfile::tempdir().unwrap();
        model.save_checkpoint(dir.path()).unwrap();
        let loaded = IdentifierModel::load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.mechanism, model.mechanism);
        assert_eq!(
            model.forward("m n", "o p").unwrap(),
            loaded.forward("m n", "o p").unwrap()
        );
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        let model = model_with_vocab("alpha beta gamma delta", 7);
        let (ctx_ids, rsp_ids) = model.encode_sides("alpha beta", "gamma delta beta").unwrap();
        let mut tape = Tape::new();
        let reg = TapeIdentifier::register(&mut tape, model.params());
        let logits_var = model.forward_tape(&mut tape, &reg, &ctx_ids, &rsp_ids);
        let tape_logits = tape.value(logits_var);
        let (plain_logits, _) = model.forward("alpha beta", "gamma delta beta").unwrap();
        for i in 0..3 {
            assert_eq!(plain_logits[i], tape_logits.at(0, i));
        }
    }

    proptest! {
        /// Softmax normalization holds on every forward output.
        #[test]
        fn probs_sum_to_one(seed in 0u64..200) {
            let model = model_with_vocab("one two three four five six", seed);
            let (_, probs) = model.forward("one two three", "four five six").unwrap();
            let sum: f64 = probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(probs.iter().all(|&p| p >= 0.0));
        }
    }
}
