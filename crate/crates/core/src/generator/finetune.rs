//! Supervised fine-tuning: token-level negative log-likelihood of targets
//! given rendered contexts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeneratorError, GeneratorModel, GeneratorRole, TapeSeq2Seq};
use crate::corpus::{render_context, DialogueSample};
use crate::nn::{AdamW, Tape};
use crate::tokenizer::EOS;

/// Supervised fine-tuning settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1.0e-4,
            batch_size: 8,
            epochs: 10,
            seed: 42,
        }
    }
}

/// One row of the fine-tuning metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ppl: f64,
}

/// Minimize the token-level NLL of targets. Keeps the parameters from the
/// epoch with the best validation perplexity.
pub fn finetune_mle(
    model: &mut GeneratorModel,
    train: &[DialogueSample],
    val: &[DialogueSample],
    turn_separator: &str,
    cfg: &FinetuneConfig,
) -> Result<Vec<FinetuneEpoch>, GeneratorError> {
    if model.role() != GeneratorRole::Policy {
        return Err(GeneratorError::FrozenReference);
    }
    if train.is_empty() || val.is_empty() {
        return Err(GeneratorError::EmptyCorpus);
    }

    // Pre-encode once; contexts are truncated from the left inside the
    // forward pass and targets get a terminating <eos>.
    let mut encoded = Vec::with_capacity(train.len());
    for sample in train {
        let context = render_context(sample, turn_separator);
        let ctx_ids = model.vocab().encode(&context);
        if ctx_ids.is_empty() {
            return Err(GeneratorError::EmptyContext);
        }
        let mut target_ids = model.vocab().encode(&sample.target);
        if target_ids.is_empty() {
            return Err(GeneratorError::EmptyTarget {
                id: sample.id.clone(),
            });
        }
        target_ids.push(EOS);
        let ctx_ids =
            crate::tokenizer::truncate_left(&ctx_ids, model.config().max_context_tokens);
        encoded.push((ctx_ids, target_ids));
    }

    let mut optimizer = AdamW::for_params(cfg.lr, &model.backbone_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, crate::generator::Seq2SeqParams)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let reg = TapeSeq2Seq::register(
                &mut tape,
                model.params(),
                None,
                model.config().hidden_dim,
            );
            let mut token_count = 0usize;
            let mut terms = Vec::new();
            for &i in chunk {
                let (ctx_ids, target_ids) = &encoded[i];
                let (lps, _) = reg.teacher_forced(&mut tape, ctx_ids, target_ids, false);
                token_count += lps.len();
                terms.extend(lps);
            }
            let total_lp = tape.sum_scalars(&terms);
            let loss = tape.scale(total_lp, -1.0 / token_count as f64);
            epoch_loss += tape.value(loss).item();
            batches += 1;

            let grads = tape.gradients_for(loss, &reg.param_vars());
            let mut params = model.params_mut().tensors_mut();
            optimizer.step(&mut params, &grads);
        }

        let val_ppl = model.corpus_perplexity(val, turn_separator)?;
        let train_loss = epoch_loss / batches as f64;
        log.push(FinetuneEpoch {
            epoch,
            train_loss,
            val_ppl,
        });
        if best.as_ref().is_none_or(|(ppl, _)| val_ppl < *ppl) {
            best = Some((val_ppl, model.params().clone()));
        }
    }

    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(log)
}
