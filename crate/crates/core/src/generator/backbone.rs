//! Backbone parameters and forward passes.
//!
//! The same computation exists twice: a plain [`Tensor`] path for
//! inference (sampling, scoring, evaluation) and a [`Tape`] path for
//! training. Both apply operations in the same order so their outputs are
//! bit-identical; a test pins that equivalence.

use serde::{Deserialize, Serialize};

use crate::nn::{Tape, Tensor, Var};
use crate::tokenizer::BOS;

/// Backbone dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Contexts are truncated from the left (most recent turns kept).
    pub max_context_tokens: usize,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 32,
            max_context_tokens: 256,
        }
    }
}

/// Encoder-decoder weights. The embedding table is shared between the
/// context encoder and the decoder input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqParams {
    pub embed: Tensor,
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub w_c: Tensor,
    pub b_h: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl Seq2SeqParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.embed,
            &self.w_x,
            &self.w_h,
            &self.w_c,
            &self.b_h,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embed,
            &mut self.w_x,
            &mut self.w_h,
            &mut self.w_c,
            &mut self.b_h,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    /// Mean-pooled context embedding, `(1, embed_dim)`.
    pub fn encode_context(&self, ctx_ids: &[usize]) -> Tensor {
        self.embed.gather_rows(ctx_ids).mean_rows()
    }

    /// One decoder step: consume `prev` and produce the next hidden state.
    pub fn step(&self, prev: usize, h: &Tensor, ctx: &Tensor) -> Tensor {
        let x = self.embed.gather_rows(&[prev]);
        let pre = x
            .matmul(&self.w_x)
            .add(&h.matmul(&self.w_h))
            .add(&ctx.matmul(&self.w_c))
            .add(&self.b_h);
        pre.map(f64::tanh)
    }

    /// Output logits for one hidden state, `(1, vocab)`.
    pub fn logits(&self, h: &Tensor) -> Tensor {
        h.matmul(&self.w_out).add(&self.b_out)
    }
}

/// Token-level value head: a linear map from decoder hidden states to
/// scalar state-value estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueHead {
    pub w: Tensor,
    pub b: Tensor,
}

impl ValueHead {
    pub fn value(&self, h: &Tensor) -> f64 {
        h.matmul(&self.w).item() + self.b.item()
    }
}

/// Backbone registered on a tape, for training passes.
pub struct TapeSeq2Seq {
    pub embed: Var,
    pub w_x: Var,
    pub w_h: Var,
    pub w_c: Var,
    pub b_h: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub value_head: Option<(Var, Var)>,
    hidden_dim: usize,
}

impl TapeSeq2Seq {
    /// Register the model's parameters as tape leaves. The returned var
    /// order matches [`crate::generator::GeneratorModel::all_params`].
    pub fn register(
        tape: &mut Tape,
        params: &Seq2SeqParams,
        value_head: Option<&ValueHead>,
        hidden_dim: usize,
    ) -> Self {
        let embed = tape.leaf(params.embed.clone());
        let w_x = tape.leaf(params.w_x.clone());
        let w_h = tape.leaf(params.w_h.clone());
        let w_c = tape.leaf(params.w_c.clone());
        let b_h = tape.leaf(params.b_h.clone());
        let w_out = tape.leaf(params.w_out.clone());
        let b_out = tape.leaf(params.b_out.clone());
        let value_head = value_head.map(|vh| (tape.leaf(vh.w.clone()), tape.leaf(vh.b.clone())));
        Self {
            embed,
            w_x,
            w_h,
            w_c,
            b_h,
            w_out,
            b_out,
            value_head,
            hidden_dim,
        }
    }

    /// Parameter vars in the same order as `all_params`.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = vec![
            self.embed, self.w_x, self.w_h, self.w_c, self.b_h, self.w_out, self.b_out,
        ];
        if let Some((w, b)) = self.value_head {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Teacher-forced pass producing one log-prob var per position and,
    /// when a value head is registered and `want_values` is set, one value
    /// var per position. All returned vars are `(1, 1)`.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        ctx_ids: &[usize],
        token_ids: &[usize],
        want_values: bool,
    ) -> (Vec<Var>, Vec<Var>) {
        let ctx_rows = tape.gather_rows(self.embed, ctx_ids);
        let ctx = tape.mean_rows(ctx_rows);
        let mut h = tape.leaf(Tensor::zeros(1, self.hidden_dim));
        let mut prev = BOS;
        let mut logprobs = Vec::with_capacity(token_ids.len());
        let mut values = Vec::new();
        for &tok in token_ids {
            let x = tape.gather_rows(self.embed, &[prev]);
            let xw = tape.matmul(x, self.w_x);
            let hw = tape.matmul(h, self.w_h);
            let s1 = tape.add(xw, hw);
            let cw = tape.matmul(ctx, self.w_c);
            let s2 = tape.add(s1, cw);
            let pre = tape.add(s2, self.b_h);
            h = tape.tanh(pre);
            let ho = tape.matmul(h, self.w_out);
            let logits = tape.add(ho, self.b_out);
            let logprob_row = tape.log_softmax_rows(logits);
            logprobs.push(tape.pick_per_row(logprob_row, &[tok]));
            if want_values {
                if let Some((w, b)) = self.value_head {
                    let hv = tape.matmul(h, w);
                    values.push(tape.add(hv, b));
                }
            }
            prev = tok;
        }
        (logprobs, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{GeneratorModel, Seq2SeqConfig};
    use crate::tokenizer::Vocab;

    /// The tape path and the plain-tensor path must agree bit-for-bit;
    /// training and inference otherwise drift apart silently.
    #[test]
    fn tape_and_plain_forward_are_bit_identical() {
        let vocab = Vocab::build(["alpha beta gamma delta epsilon"], 50);
        let model = GeneratorModel::new(
            vocab,
            Seq2SeqConfig {
                embed_dim: 5,
                hidden_dim: 3,
                max_context_tokens: 32,
            },
            1234,
        );
        let context = "alpha beta gamma";
        let token_ids = vec![4, 6, 5, 2];
        let (plain_lp, plain_v) = model.logprobs_and_values(context, &token_ids).unwrap();

        let mut tape = Tape::new();
        let reg = TapeSeq2Seq::register(
            &mut tape,
            model.params(),
            model.value_head(),
            model.config().hidden_dim,
        );
        let ctx_ids = model.vocab().encode(context);
        let (lp_vars, v_vars) = reg.teacher_forced(&mut tape, &ctx_ids, &token_ids, true);
        let tape_lp: Vec<f64> = lp_vars.iter().map(|&v| tape.value(v).item()).collect();
        let tape_v: Vec<f64> = v_vars.iter().map(|&v| tape.value(v).item()).collect();
        assert_eq!(plain_lp, tape_lp);
        assert_eq!(plain_v, tape_v);
    }
}
