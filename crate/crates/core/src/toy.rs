//! Synthetic corpora and rule-based judges for desk-scale runs.
//!
//! The keyword judges implement [`EmpathyJudge`] with a deterministic
//! containment rule, so reward shaping and evaluation can run without
//! trained identifiers. The dialogue generator pairs situations with
//! either empathetic keyword-bearing targets or flat ones, planting an
//! easy reward pattern for alignment smoke runs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedPair, DialogueSample, EmpathyLevel, Mechanism, Role, Utterance};
use crate::identifier::{EmpathyJudge, EmpathyJudgment, IdentifierError, JudgeSet};

/// Deterministic keyword-containment judge: any strong keyword in the
/// response gives `Strong`, else any weak keyword gives `Weak`, else `No`.
/// Probabilities put `confidence` on the chosen level and split the rest.
#[derive(Clone, Debug)]
pub struct KeywordJudge {
    mechanism: Mechanism,
    strong: Vec<String>,
    weak: Vec<String>,
    confidence: f64,
}

impl KeywordJudge {
    pub fn new(mechanism: Mechanism, strong: &[&str], weak: &[&str], confidence: f64) -> Self {
        assert!(
            confidence > 1.0 / 3.0 && confidence <= 1.0,
            "confidence must make the chosen level the argmax"
        );
        Self {
            mechanism,
            strong: strong.iter().map(|s| s.to_lowercase()).collect(),
            weak: weak.iter().map(|s| s.to_lowercase()).collect(),
            confidence,
        }
    }

    pub fn level_of(&self, response: &str) -> EmpathyLevel {
        let tokens: Vec<String> = response
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .collect();
        if tokens.iter().any(|t| self.strong.contains(t)) {
            EmpathyLevel::Strong
        } else if tokens.iter().any(|t| self.weak.contains(t)) {
            EmpathyLevel::Weak
        } else {
            EmpathyLevel::No
        }
    }
}

impl EmpathyJudge for KeywordJudge {
    fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    fn judge(&self, _context: &str, response: &str) -> Result<EmpathyJudgment, IdentifierError> {
        if response.split_whitespace().next().is_none() {
            return Err(IdentifierError::EmptyInput { side: "response" });
        }
        let level = self.level_of(response);
        let rest = (1.0 - self.confidence) / 2.0;
        let mut probs = [rest; 3];
        probs[level.index()] = self.confidence;
        Ok(EmpathyJudgment::from_probs(self.mechanism, probs))
    }
}

/// Keyword vocabulary used by the standard toy judges, per mechanism:
/// `(strong, weak)`.
pub fn keyword_rules(mechanism: Mechanism) -> (&'static [&'static str], &'static [&'static str]) {
    match mechanism {
        Mechanism::EmotionalReaction => (&["sorry", "terrible", "awful"], &["oh"]),
        Mechanism::Interpretation => (&["sounds", "understand", "feel"], &["see"]),
        Mechanism::Exploration => (&["what", "how", "why"], &["tell"]),
    }
}

/// The standard toy judge set (confidence 0.9).
pub fn keyword_judges() -> JudgeSet {
    let make = |mechanism| {
        let (strong, weak) = keyword_rules(mechanism);
        Box::new(KeywordJudge::new(mechanism, strong, weak, 0.9)) as Box<dyn EmpathyJudge>
    };
    JudgeSet::new([
        make(Mechanism::EmotionalReaction),
        make(Mechanism::Interpretation),
        make(Mechanism::Exploration),
    ])
    .expect("mechanism order is fixed")
}

const SITUATIONS: [&str; 6] = [
    "i lost my job last week",
    "my dog has been sick for days",
    "i failed my big exam today",
    "my best friend moved far away",
    "i broke my arm playing soccer",
    "my car broke down again this morning",
];

const EMPATHETIC_TARGETS: [&str; 3] = [
    "i am so sorry that sounds really hard how are you holding up",
    "oh no i am sorry it sounds awful what happened next",
    "that sounds terrible i understand how you must feel",
];

const FLAT_TARGETS: [&str; 2] = ["ok i guess that happens", "right that is life"];

/// Dialogue corpus with a planted pattern: `empathetic_fraction` of the
/// targets carry the strong keywords for all three mechanisms, the rest
/// are flat. A fraction of 1.0 makes every gold label `Strong`.
pub fn dialogue_corpus(n: usize, empathetic_fraction: f64, seed: u64) -> Vec<DialogueSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let situation = SITUATIONS[i % SITUATIONS.len()];
            let target = if rng.gen::<f64>() < empathetic_fraction {
                EMPATHETIC_TARGETS[rng.gen_range(0..EMPATHETIC_TARGETS.len())]
            } else {
                FLAT_TARGETS[rng.gen_range(0..FLAT_TARGETS.len())]
            };
            DialogueSample {
                id: format!("toy{i}"),
                context: vec![Utterance {
                    role: Role::Speaker,
                    text: situation.to_string(),
                }],
                target: target.to_string(),
            }
        })
        .collect()
}

/// Response templates labeled by the keyword rules. Index by
/// `(emotional reaction, interpretation, exploration)` level.
fn response_for_levels(levels: [EmpathyLevel; 3], filler: &str) -> String {
    let mut words: Vec<&str> = Vec::new();
    match levels[0] {
        EmpathyLevel::Strong => words.push("sorry"),
        EmpathyLevel::Weak => words.push("oh"),
        EmpathyLevel::No => {}
    }
    match levels[1] {
        EmpathyLevel::Strong => words.push("sounds"),
        EmpathyLevel::Weak => words.push("see"),
        EmpathyLevel::No => {}
    }
    match levels[2] {
        EmpathyLevel::Strong => words.push("what"),
        EmpathyLevel::Weak => words.push("tell"),
        EmpathyLevel::No => {}
    }
    if words.is_empty() {
        format!("fine then {filler}")
    } else {
        format!("{} {filler}", words.join(" "))
    }
}

const FILLERS: [&str; 5] = [
    "about your day",
    "about the news",
    "given everything lately",
    "after all that",
    "with your family",
];

/// Annotated pairs whose joint levels are a deterministic keyword function
/// of the response text, cycling through all 27 level combinations.
pub fn synth_annotated_keyword_pairs(n: usize, seed: u64) -> Vec<AnnotatedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let combo = i % 27;
            let levels = [
                EmpathyLevel::ALL[combo % 3],
                EmpathyLevel::ALL[(combo / 3) % 3],
                EmpathyLevel::ALL[(combo / 9) % 3],
            ];
            let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
            let response = response_for_levels(levels, filler);
            let seek = SITUATIONS[rng.gen_range(0..SITUATIONS.len())];
            AnnotatedPair {
                id: format!("kw{i}"),
                seek_post: seek.to_string(),
                response_post: response,
                levels: BTreeMap::from([
                    (Mechanism::EmotionalReaction, levels[0]),
                    (Mechanism::Interpretation, levels[1]),
                    (Mechanism::Exploration, levels[2]),
                ]),
            }
        })
        .collect()
}

/// Keyword-labeled pairs whose level distribution for `mechanism` follows
/// the given histogram proportions (largest-remainder rounding).
pub fn synth_annotated_keyword_pairs_imbalanced(
    n: usize,
    mechanism: Mechanism,
    histogram: [usize; 3],
    seed: u64,
) -> Vec<AnnotatedPair> {
    let quotas = proportional_quotas(n, histogram);
    let mut levels_for_mechanism: Vec<EmpathyLevel> = Vec::with_capacity(n);
    for (level, &quota) in EmpathyLevel::ALL.iter().zip(&quotas) {
        levels_for_mechanism.extend(std::iter::repeat_n(*level, quota));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    levels_for_mechanism.shuffle(&mut rng);

    levels_for_mechanism
        .into_iter()
        .enumerate()
        .map(|(i, target_level)| {
            let mut levels = [EmpathyLevel::No; 3];
            levels[mechanism.index()] = target_level;
            // other mechanisms vary freely
            for m in Mechanism::ALL {
                if m != mechanism {
                    levels[m.index()] = EmpathyLevel::ALL[rng.gen_range(0..3)];
                }
            }
            let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
            let response = response_for_levels(levels, filler);
            let seek = SITUATIONS[rng.gen_range(0..SITUATIONS.len())];
            AnnotatedPair {
                id: format!("imb{i}"),
                seek_post: seek.to_string(),
                response_post: response,
                levels: BTreeMap::from([
                    (Mechanism::EmotionalReaction, levels[0]),
                    (Mechanism::Interpretation, levels[1]),
                    (Mechanism::Exploration, levels[2]),
                ]),
            }
        })
        .collect()
}

fn proportional_quotas(n: usize, histogram: [usize; 3]) -> [usize; 3] {
    let total: usize = histogram.iter().sum();
    let mut quotas = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for i in 0..3 {
        let exact = n as f64 * histogram[i] as f64 / total as f64;
        quotas[i] = exact.floor() as usize;
        assigned += quotas[i];
        remainders.push((i, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.into_iter().take(n - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Annotated corpus realizing exact per-mechanism level histograms. All
/// three rows of `histograms` must sum to the same total; each mechanism's
/// level column is a seeded permutation of the exact quota assignment.
pub fn annotated_corpus_with_histograms(
    histograms: [[usize; 3]; 3],
    seed: u64,
) -> Vec<AnnotatedPair> {
    let total: usize = histograms[0].iter().sum();
    for h in &histograms {
        assert_eq!(h.iter().sum::<usize>(), total, "histogram totals differ");
    }
    use rand::seq::SliceRandom;
    let mut columns: Vec<Vec<EmpathyLevel>> = Vec::with_capacity(3);
    for (m, histogram) in histograms.iter().enumerate() {
        let mut column: Vec<EmpathyLevel> = Vec::with_capacity(total);
        for (level, &count) in EmpathyLevel::ALL.iter().zip(histogram) {
            column.extend(std::iter::repeat_n(*level, count));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeding::mix_seed(seed, m as u64));
        column.shuffle(&mut rng);
        columns.push(column);
    }
    (0..total)
        .map(|i| AnnotatedPair {
            id: format!("mhs{i}"),
            seek_post: format!("seek post number {i} about a difficult time"),
            response_post: format!("response post number {i} from a peer supporter"),
            levels: BTreeMap::from([
                (Mechanism::EmotionalReaction, columns[0][i]),
                (Mechanism::Interpretation, columns[1][i]),
                (Mechanism::Exploration, columns[2][i]),
            ]),
        })
        .collect()
}

/// Write dialogue samples as a loader-compatible CSV, one conversation per
/// sample.
pub fn write_dialogue_csv(path: &Path, samples: &[DialogueSample]) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["conv_id", "utterance_idx", "role", "text", "emotion", "situation"])?;
    for (i, sample) in samples.iter().enumerate() {
        let conv_id = format!("c{i}");
        for (j, turn) in sample.context.iter().enumerate() {
            let role = match turn.role {
                Role::Speaker => "speaker",
                Role::Listener => "listener",
            };
            writer.write_record([
                conv_id.as_str(),
                &j.to_string(),
                role,
                &turn.text,
                "",
                "",
            ])?;
        }
        writer.write_record([
            conv_id.as_str(),
            &sample.context.len().to_string(),
            "listener",
            &sample.target,
            "",
            "",
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Write annotated pairs as a loader-compatible joint CSV.
pub fn write_annotated_csv(path: &Path, pairs: &[AnnotatedPair]) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "id",
        "seek_post",
        "response_post",
        "level_er",
        "level_ip",
        "level_ex",
    ])?;
    for pair in pairs {
        writer.write_record([
            pair.id.as_str(),
            &pair.seek_post,
            &pair.response_post,
            &pair.levels[&Mechanism::EmotionalReaction].index().to_string(),
            &pair.levels[&Mechanism::Interpretation].index().to_string(),
            &pair.levels[&Mechanism::Exploration].index().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
