//! Decoding configuration and the temperature / top-k / nucleus filter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeneratorError;

/// Decoding settings. RL rollouts reuse the inference settings unless
/// overridden in the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub max_steps: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            max_steps: 30,
            top_k: 20,
            top_p: 1.0,
            temperature: 0.9,
            seed: 42,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.max_steps < 1 {
            return Err(GeneratorError::InvalidSampling(
                "max_steps must be at least 1".into(),
            ));
        }
        if self.top_k < 1 {
            return Err(GeneratorError::InvalidSampling(
                "top_k must be at least 1".into(),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GeneratorError::InvalidSampling(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(GeneratorError::InvalidSampling(format!(
                "temperature must be > 0 (the tau -> 0 limit is greedy decoding; use top_k = 1), got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Draw one token from temperature-scaled logits after top-k then top-p
/// filtering. Masked entries are `-inf`. Ties in the ranking break toward
/// the lower token id, so `top_k = 1` is deterministic greedy decoding.
pub fn filter_and_draw(scaled_logits: &[f64], top_k: usize, top_p: f64, rng: &mut ChaCha8Rng) -> usize {
    // softmax over the unmasked entries
    let max = scaled_logits
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "all logits masked");
    let mut candidates: Vec<(usize, f64)> = scaled_logits
        .iter()
        .enumerate()
        .filter(|(_, &logit)| logit.is_finite())
        .map(|(id, &logit)| (id, (logit - max).exp()))
        .collect();
    let z: f64 = candidates.iter().map(|(_, w)| w).sum();
    for (_, w) in candidates.iter_mut() {
        *w /= z;
    }

    // rank by probability, lowest id first on ties
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    candidates.truncate(top_k);

    // nucleus: smallest prefix whose mass reaches top_p
    let mut kept = 0usize;
    let mut mass = 0.0;
    for (i, (_, p)) in candidates.iter().enumerate() {
        mass += p;
        kept = i + 1;
        if mass >= top_p {
            break;
        }
    }
    candidates.truncate(kept.max(1));

    let total: f64 = candidates.iter().map(|(_, p)| p).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(id, p) in &candidates {
        u -= p;
        if u <= 0.0 {
            return id;
        }
    }
    candidates.last().expect("at least one candidate").0
}
