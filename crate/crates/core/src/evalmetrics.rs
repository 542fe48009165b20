//! Automatic evaluation: perplexity, Dist-1/2 diversity, and empathy-F1
//! similarity between generated and target responses.
//!
//! Metric conventions: Dist-n and Emp-F1 are stored as fractions in
//! [0, 1]; display surfaces multiply by 100. Perplexity is only reported
//! for models exposing teacher-forced likelihoods, hence the `Option`.

use std::collections::BTreeMap;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{render_context, DialogueSample, EmpathyLevel, Mechanism};
use crate::generator::{GeneratorError, GeneratorModel, SamplingConfig};
use crate::identifier::{IdentifierError, JudgeSet};
use crate::seeding::mix_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation input is empty")]
    EmptyInput,
    #[error("distinct-n is defined for n in {{1, 2}}, got {0}")]
    InvalidNgramOrder(usize),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Identifier(#[from] IdentifierError),
}

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sampling: SamplingConfig,
    pub turn_separator: String,
    /// Evaluate at most this many samples (in corpus order).
    pub max_samples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            turn_separator: " ".into(),
            max_samples: None,
        }
    }
}

/// Aggregate metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ppl: Option<f64>,
    pub dist1: f64,
    pub dist2: f64,
    pub emp_f1: Option<f64>,
    pub per_mechanism_f1: Option<BTreeMap<Mechanism, f64>>,
    pub n_samples: usize,
}

/// One line of the generation dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub context: String,
    pub generated: String,
    pub token_count: usize,
}

/// Weighted-average F1 over the three levels, with gold-class supports as
/// weights. Classes with an undefined precision, recall, or F1 contribute
/// zero.
pub fn weighted_f1(gold: &[EmpathyLevel], predicted: &[EmpathyLevel]) -> f64 {
    assert_eq!(gold.len(), predicted.len(), "label list length mismatch");
    if gold.is_empty() {
        return 0.0;
    }
    let mut tp = [0usize; 3];
    let mut fp = [0usize; 3];
    let mut fn_ = [0usize; 3];
    for (&g, &p) in gold.iter().zip(predicted) {
        if g == p {
            tp[g.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fn_[g.index()] += 1;
        }
    }
    let mut weighted = 0.0;
    for class in 0..3 {
        let support = tp[class] + fn_[class];
        if support == 0 {
            continue;
        }
        let predicted_count = tp[class] + fp[class];
        let precision = if predicted_count > 0 {
            tp[class] as f64 / predicted_count as f64
        } else {
            0.0
        };
        let recall = tp[class] as f64 / support as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted += support as f64 * f1;
    }
    weighted / gold.len() as f64
}

/// Corpus perplexity of targets under teacher forcing. Delegates to the
/// generator's log-probabilities so there is a single definition.
pub fn perplexity(
    model: &GeneratorModel,
    samples: &[DialogueSample],
    turn_separator: &str,
) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(model.corpus_perplexity(samples, turn_separator)?)
}

/// Corpus-level distinct n-gram ratio over whitespace-tokenized,
/// lowercased text pooled across all responses.
pub fn distinct_n(texts: &[String], n: usize) -> Result<f64, EvalError> {
    if !(n == 1 || n == 2) {
        return Err(EvalError::InvalidNgramOrder(n));
    }
    if texts.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (distinct, total) = ngram_counts(texts, n);
    if total == 0 {
        log::warn!("distinct-{n}: all responses are empty; reporting 0 by definition");
        return Ok(0.0);
    }
    Ok(distinct as f64 / total as f64)
}

/// Distinct and total pooled n-gram counts (the count-level oracle behind
/// [`distinct_n`]).
pub fn ngram_counts(texts: &[String], n: usize) -> (usize, usize) {
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for text in texts {
        let tokens: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
        if tokens.len() < n {
            continue;
        }
        for gram in tokens.windows(n) {
            seen.insert(gram.to_vec());
            total += 1;
        }
    }
    (seen.len(), total)
}

/// Empathy-F1 between generated and target responses: per mechanism, gold
/// labels come from judging `(context, target)` and predictions from
/// judging `(context, generated)`; the score is the unweighted mean of the
/// three per-mechanism weighted F1s.
pub fn emp_f1(
    pairs: &[(String, String, String)],
    judges: &JudgeSet,
) -> Result<(f64, BTreeMap<Mechanism, f64>), EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut per_mechanism = BTreeMap::new();
    let mut sum = 0.0;
    for mechanism in Mechanism::ALL {
        let judge = judges.get(mechanism);
        let mut gold = Vec::with_capacity(pairs.len());
        let mut pred = Vec::with_capacity(pairs.len());
        for (context, generated, target) in pairs {
            gold.push(judge.judge(context, target)?.label);
            pred.push(judge.judge(context, generated)?.label);
        }
        let f1 = weighted_f1(&gold, &pred);
        per_mechanism.insert(mechanism, f1);
        sum += f1;
    }
    Ok((sum / 3.0, per_mechanism))
}

/// Generate one response per sample and compute every metric. Without a
/// judge set the empathy-F1 fields are omitted.
pub fn evaluate(
    model: &GeneratorModel,
    judges: Option<&JudgeSet>,
    samples: &[DialogueSample],
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<GenerationRecord>), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let limit = cfg.max_samples.unwrap_or(samples.len()).min(samples.len());
    if limit == 0 {
        return Err(EvalError::EmptyInput);
    }
    let samples = &samples[..limit];

    let mut records = Vec::with_capacity(samples.len());
    let mut pairs = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let context = render_context(sample, &cfg.turn_separator);
        let sampling = cfg.sampling.with_seed(mix_seed(cfg.sampling.seed, i as u64));
        let (token_ids, generated) = model.sample(&context, &sampling)?;
        records.push(GenerationRecord {
            id: sample.id.clone(),
            context: context.clone(),
            generated: generated.clone(),
            token_count: token_ids.len(),
        });
        pairs.push((context, generated, sample.target.clone()));
    }

    let texts: Vec<String> = records.iter().map(|r| r.generated.clone()).collect();
    let dist1 = distinct_n(&texts, 1)?;
    let dist2 = distinct_n(&texts, 2)?;
    let ppl = Some(perplexity(model, samples, &cfg.turn_separator)?);
    let (emp, per_mechanism) = match judges {
        Some(judges) => {
            let (score, map) = emp_f1(&pairs, judges)?;
            (Some(score), Some(map))
        }
        None => (None, None),
    };
    Ok((
        EvalReport {
            ppl,
            dist1,
            dist2,
            emp_f1: emp,
            per_mechanism_f1: per_mechanism,
            n_samples: samples.len(),
        },
        records,
    ))
}
