//! Identifier training: cross-entropy on gold levels with early stopping
//! on validation weighted F1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::TapeIdentifier;
use super::{IdentifierConfig, IdentifierError, IdentifierModel};
use crate::corpus::{AnnotatedPair, EmpathyLevel, Mechanism};
use crate::evalmetrics::weighted_f1;
use crate::identifier::EmpathyJudge;
use crate::nn::{AdamW, Tape};
use crate::tokenizer::Vocab;

/// Training settings for one identifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifierTrainConfig {
    pub arch: IdentifierConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation F1.
    pub patience: usize,
    /// Weigh classes by inverse frequency. Off by default.
    pub class_weights: bool,
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for IdentifierTrainConfig {
    fn default() -> Self {
        Self {
            arch: IdentifierConfig::default(),
            lr: 1.0e-2,
            batch_size: 16,
            epochs: 30,
            patience: 5,
            class_weights: false,
            max_vocab: 8000,
            seed: 42,
        }
    }
}

/// One row of the identifier metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
}

fn gold_level(pair: &AnnotatedPair, mechanism: Mechanism) -> Result<EmpathyLevel, IdentifierError> {
    pair.levels
        .get(&mechanism)
        .copied()
        .ok_or_else(|| IdentifierError::MissingLevel {
            id: pair.id.clone(),
            mechanism,
        })
}

/// Train one identifier on already-split data. Returns the model restored
/// to its best-validation-F1 parameters together with the per-epoch log.
pub fn train_identifier(
    train: &[AnnotatedPair],
    val: &[AnnotatedPair],
    mechanism: Mechanism,
    cfg: &IdentifierTrainConfig,
) -> Result<(IdentifierModel, Vec<IdentifierEpoch>), IdentifierError> {
    if train.is_empty() || val.is_empty() {
        return Err(IdentifierError::EmptyTrainingSet);
    }
    let train_gold: Vec<EmpathyLevel> = train
        .iter()
        .map(|p| gold_level(p, mechanism))
        .collect::<Result<_, _>>()?;
    let val_gold: Vec<EmpathyLevel> = val
        .iter()
        .map(|p| gold_level(p, mechanism))
        .collect::<Result<_, _>>()?;

    let mut class_counts = [0usize; 3];
    for &level in &train_gold {
        class_counts[level.index()] += 1;
    }
    if class_counts.iter().filter(|&&c| c > 0).count() == 1 {
        log::warn!(
            "training set for {mechanism} contains a single class; the model may degenerate"
        );
    }
    let weights: [f64; 3] = if cfg.class_weights {
        let total = train_gold.len() as f64;
        std::array::from_fn(|i| {
            if class_counts[i] > 0 {
                total / (3.0 * class_counts[i] as f64)
            } else {
                0.0
            }
        })
    } else {
        [1.0; 3]
    };

    let vocab = Vocab::build(
        train
            .iter()
            .flat_map(|p| [p.seek_post.as_str(), p.response_post.as_str()]),
        cfg.max_vocab,
    );
    let mut model = IdentifierModel::new(mechanism, vocab, cfg.arch.clone(), cfg.seed);
    let mut optimizer = AdamW::for_params(cfg.lr, &model.params().tensors());

    let encoded: Vec<(Vec<usize>, Vec<usize>, usize)> = train
        .iter()
        .zip(&train_gold)
        .map(|(pair, &gold)| {
            let (ctx, rsp) = model.encode_sides(&pair.seek_post, &pair.response_post)?;
            Ok((ctx, rsp, gold.index()))
        })
        .collect::<Result<_, IdentifierError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut best: Option<(f64, super::IdentifierParams)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let reg = TapeIdentifier::register(&mut tape, model.params());
            let mut terms = Vec::with_capacity(chunk.len());
            let mut weight_sum = 0.0;
            for &i in chunk {
                let (ctx_ids, rsp_ids, gold) = &encoded[i];
                let logits = model.forward_tape(&mut tape, &reg, ctx_ids, rsp_ids);
                let logprob_row = tape.log_softmax_rows(logits);
                let gold_lp = tape.pick_per_row(logprob_row, &[*gold]);
                let w = weights[*gold];
                terms.push(tape.scale(gold_lp, -w));
                weight_sum += w;
            }
            let total = tape.sum_scalars(&terms);
            let loss = tape.scale(total, 1.0 / weight_sum.max(f64::MIN_POSITIVE));
            epoch_loss += tape.value(loss).item();
            batches += 1;
            let grads = tape.gradients_for(loss, &reg.param_vars());
            let mut params = model.params_mut().tensors_mut();
            optimizer.step(&mut params, &grads);
        }

        let predictions: Vec<EmpathyLevel> = val
            .iter()
            .map(|p| Ok(model.judge(&p.seek_post, &p.response_post)?.label))
            .collect::<Result<_, IdentifierError>>()?;
        let val_f1 = weighted_f1(&val_gold, &predictions);
        log.push(IdentifierEpoch {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_weighted_f1: val_f1,
        });

        if best.as_ref().is_none_or(|(f1, _)| val_f1 > *f1) {
            best = Some((val_f1, model.params().clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    fn keyword_corpus(n: usize, seed: u64) -> Vec<AnnotatedPair> {
        toy::synth_annotated_keyword_pairs(n, seed)
    }

    /// A Bernoulli naive-Bayes oracle over word-presence features:
    /// certifies that the keyword rule is separable from bags of words
    /// (including keyword *absence*) before asking the identifier to
    /// learn it.
    fn bag_of_words_oracle_f1(
        train: &[AnnotatedPair],
        val: &[AnnotatedPair],
        mechanism: Mechanism,
    ) -> f64 {
        use std::collections::{HashMap, HashSet};
        let mut vocab: HashMap<String, usize> = HashMap::new();
        for p in train {
            for w in p.response_post.split_whitespace() {
                let next = vocab.len();
                vocab.entry(w.to_lowercase()).or_insert(next);
            }
        }
        let mut doc_counts = vec![vec![0usize; vocab.len()]; 3];
        let mut class_counts = [0usize; 3];
        for p in train {
            let gold = p.levels[&mechanism].index();
            class_counts[gold] += 1;
            let present: HashSet<usize> = p
                .response_post
                .split_whitespace()
                .filter_map(|w| vocab.get(&w.to_lowercase()).copied())
                .collect();
            for i in present {
                doc_counts[gold][i] += 1;
            }
        }
        let n_train = train.len() as f64;
        let gold: Vec<EmpathyLevel> = val.iter().map(|p| p.levels[&mechanism]).collect();
        let pred: Vec<EmpathyLevel> = val
            .iter()
            .map(|p| {
                let present: HashSet<usize> = p
                    .response_post
                    .split_whitespace()
                    .filter_map(|w| vocab.get(&w.to_lowercase()).copied())
                    .collect();
                let score = |k: usize| {
                    let mut s = (class_counts[k] as f64 / n_train).ln();
                    for i in 0..vocab.len() {
                        let theta = (doc_counts[k][i] as f64 + 1.0)
                            / (class_counts[k] as f64 + 2.0);
                        s += if present.contains(&i) {
                            theta.ln()
                        } else {
                            (1.0 - theta).ln()
                        };
                    }
                    s
                };
                let best = (0..3)
                    .filter(|&k| class_counts[k] > 0)
                    .max_by(|&a, &b| score(a).partial_cmp(&score(b)).unwrap())
                    .unwrap();
                EmpathyLevel::from_code(best as u8).unwrap()
            })
            .collect();
        weighted_f1(&gold, &pred)
    }

    #[test]
    fn learns_separable_keyword_rule() {
        let pairs = keyword_corpus(60, 11);
        let (train, val) = crate::corpus::split(&pairs, 0.25, 5).unwrap();
        let mechanism = Mechanism::EmotionalReaction;

        // oracle first: the rule must be separable from bags of words
        let oracle = bag_of_words_oracle_f1(&train, &val, mechanism);
        assert!(oracle >= 0.95, "synthetic rule not separable: {oracle}");

        let cfg = IdentifierTrainConfig {
            arch: IdentifierConfig {
                embed_dim: 24,
                ..IdentifierConfig::default()
            },
            epochs: 20,
            lr: 2.0e-2,
            batch_size: 8,
            seed: 3,
            ..IdentifierTrainConfig::default()
        };
        let (_, log) = train_identifier(&train, &val, mechanism, &cfg).unwrap();
        let best = log
            .iter()
            .map(|e| e.val_weighted_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= 0.95, "identifier failed to learn the rule: {best}");
    }

    #[test]
    fn training_trace_is_deterministic() {
        let pairs = keyword_corpus(40, 12);
        let (train, val) = crate::corpus::split(&pairs, 0.25, 6).unwrap();
        let cfg = IdentifierTrainConfig {
            epochs: 4,
            seed: 8,
            ..IdentifierTrainConfig::default()
        };
        let (m1, log1) =
            train_identifier(&train, &val, Mechanism::EmotionalReaction, &cfg).unwrap();
        let (m2, log2) =
            train_identifier(&train, &val, Mechanism::EmotionalReaction, &cfg).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn single_class_training_set_proceeds_with_warning() {
        let mut pairs = keyword_corpus(20, 13);
        for p in pairs.iter_mut() {
            p.levels.insert(Mechanism::EmotionalReaction, EmpathyLevel::No);
        }
        let (train, val) = crate::corpus::split(&pairs, 0.25, 1).unwrap();
        let cfg = IdentifierTrainConfig {
            epochs: 2,
            ..IdentifierTrainConfig::default()
        };
        let result = train_identifier(&train, &val, Mechanism::EmotionalReaction, &cfg);
        assert!(result.is_ok());
    }

    #[test]
    fn empty_sets_error() {
        let pairs = keyword_corpus(10, 14);
        let cfg = IdentifierTrainConfig::default();
        assert!(matches!(
            train_identifier(&[], &pairs, Mechanism::EmotionalReaction, &cfg),
            Err(IdentifierError::EmptyTrainingSet)
        ));
        assert!(matches!(
            train_identifier(&pairs, &[], Mechanism::EmotionalReaction, &cfg),
            Err(IdentifierError::EmptyTrainingSet)
        ));
    }

    /// With imbalance matching the annotated corpus statistics, a trained
    /// identifier must beat the always-majority baseline on weighted F1.
    #[test]
    fn beats_majority_class_baseline_under_real_imbalance() {
        let pairs = toy::synth_annotated_keyword_pairs_imbalanced(
            400,
            Mechanism::EmotionalReaction,
            [2037, 895, 152],
            21,
        );
        let (train, val) = crate::corpus::split(&pairs, 0.2, 9).unwrap();
        let mechanism = Mechanism::EmotionalReaction;
        let val_gold: Vec<EmpathyLevel> = val.iter().map(|p| p.levels[&mechanism]).collect();

        let mut counts = [0usize; 3];
        for p in &train {
            counts[p.levels[&mechanism].index()] += 1;
        }
        let majority = (0..3).max_by_key(|&i| counts[i]).unwrap();
        let majority_pred: Vec<EmpathyLevel> = val_gold
            .iter()
            .map(|_| EmpathyLevel::from_code(majority as u8).unwrap())
            .collect();
        let baseline = weighted_f1(&val_gold, &majority_pred);

        let cfg = IdentifierTrainConfig {
            epochs: 15,
            lr: 2.0e-2,
            seed: 4,
            ..IdentifierTrainConfig::default()
        };
        let (model, _) = train_identifier(&train, &val, mechanism, &cfg).unwrap();
        let pred: Vec<EmpathyLevel> = val
            .iter()
            .map(|p| model.judge(&p.seek_post, &p.response_post).unwrap().label)
            .collect();
        let trained = weighted_f1(&val_gold, &pred);
        assert!(
            trained > baseline,
            "trained F1 {trained} does not beat majority baseline {baseline}"
        );
    }
}
