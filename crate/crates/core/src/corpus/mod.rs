//! Dialogue and annotated-pair corpora.
//!
//! Three corpus shapes are supported:
//! - empathetic multi-turn dialogues (one sample per listener turn),
//! - persona-stripped dialogues with arbitrary party ids, filtered to
//!   dyadic threads with one response per context,
//! - `<seek post, response post>` pairs annotated with an empathy level per
//!   communication mechanism.
//!
//! All functions here are pure over immutable inputs and safe to call from
//! multiple threads.

mod load;

pub use load::{load_annotated_pairs, load_annotated_pairs_joint, load_dialogues, DialogueFormat};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path}: row {row}: {field}: {reason}")]
    MalformedRow {
        path: String,
        row: usize,
        field: String,
        reason: String,
    },
    #[error("{path}: conversation `{conv_id}`: {reason}")]
    MalformedConversation {
        path: String,
        conv_id: String,
        reason: String,
    },
    #[error("{path}: file contains no data rows")]
    Empty { path: String },
    #[error("holdout fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("cannot split an empty pair list")]
    EmptySplit,
}

/// Which side of the conversation produced an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Speaker,
    Listener,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::Speaker => "Speaker",
            Role::Listener => "Listener",
        }
    }
}

/// One dialogue turn. `text` always contains at least one
/// non-whitespace character.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

/// A dialogue context plus the reference response for its next turn.
/// Context roles alternate starting with the speaker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    pub context: Vec<Utterance>,
    pub target: String,
}

/// The three empathy communication mechanisms. Integer codes are stable:
/// 0 = emotional reaction, 1 = interpretation, 2 = exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    EmotionalReaction,
    Interpretation,
    Exploration,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [
        Mechanism::EmotionalReaction,
        Mechanism::Interpretation,
        Mechanism::Exploration,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Mechanism> {
        Mechanism::ALL.get(index).copied()
    }

    /// Stable lowercase name, used in file layouts and logs.
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::EmotionalReaction => "emotional_reaction",
            Mechanism::Interpretation => "interpretation",
            Mechanism::Exploration => "exploration",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Empathy level of a response for one mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpathyLevel {
    No = 0,
    Weak = 1,
    Strong = 2,
}

impl EmpathyLevel {
    pub const ALL: [EmpathyLevel; 3] = [EmpathyLevel::No, EmpathyLevel::Weak, EmpathyLevel::Strong];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<EmpathyLevel> {
        match code {
            0 => Some(EmpathyLevel::No),
            1 => Some(EmpathyLevel::Weak),
            2 => Some(EmpathyLevel::Strong),
            _ => None,
        }
    }
}

/// A `<seek post, response post>` pair with empathy levels. `levels` holds
/// either all three mechanisms (joint load) or exactly one (per-mechanism
/// load).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub id: String,
    pub seek_post: String,
    pub response_post: String,
    pub levels: BTreeMap<Mechanism, EmpathyLevel>,
}

/// Per-level counts `[no, weak, strong]` for one mechanism over a pair list.
/// Pairs lacking a label for the mechanism are not counted.
pub fn level_histogram(pairs: &[AnnotatedPair], mechanism: Mechanism) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for pair in pairs {
        if let Some(level) = pair.levels.get(&mechanism) {
            counts[level.index()] += 1;
        }
    }
    counts
}

/// Deterministic train/validation split. Validation receives
/// `round(holdout_fraction * len)` pairs; the partition is disjoint and
/// exhaustive, and identical inputs yield identical output orderings.
pub fn split(
    pairs: &[AnnotatedPair],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<AnnotatedPair>, Vec<AnnotatedPair>), CorpusError> {
    if pairs.is_empty() {
        return Err(CorpusError::EmptySplit);
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(holdout_fraction));
    }
    let n_val = ((pairs.len() as f64) * holdout_fraction).round() as usize;
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let validation = indices[..n_val].iter().map(|&i| pairs[i].clone()).collect();
    let train = indices[n_val..].iter().map(|&i| pairs[i].clone()).collect();
    Ok((train, validation))
}

/// Render a dialogue context as role-tagged text. Both the generator and
/// the identifiers consume this rendering, so it is part of the stable
/// interface: `"Speaker: <text><sep>Listener: <text>..."`.
pub fn render_context(sample: &DialogueSample, turn_separator: &str) -> String {
    sample
        .context
        .iter()
        .map(|u| format!("{}: {}", u.role.tag(), u.text))
        .collect::<Vec<_>>()
        .join(turn_separator)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: usize) -> AnnotatedPair {
        AnnotatedPair {
            id: format!("p{id}"),
            seek_post: format!("seek {id}"),
            response_post: format!("resp {id}"),
            levels: BTreeMap::from([(Mechanism::EmotionalReaction, EmpathyLevel::No)]),
        }
    }

    fn sample(turns: &[(Role, &str)]) -> DialogueSample {
        DialogueSample {
            id: "s".into(),
            context: turns
                .iter()
                .map(|&(role, text)| Utterance {
                    role,
                    text: text.into(),
                })
                .collect(),
            target: "t".into(),
        }
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        let pairs: Vec<_> = (0..3084).map(pair).collect();
        let (train, val) = split(&pairs, 0.2, 7).unwrap();
        assert_eq!(val.len(), 617);
        assert_eq!(train.len(), 2467);
    }

    #[test]
    fn split_is_deterministic_disjoint_exhaustive() {
        let pairs: Vec<_> = (0..25).map(pair).collect();
        let (t1, v1) = split(&pairs, 0.2, 99).unwrap();
        let (t2, v2) = split(&pairs, 0.2, 99).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);

        let mut ids: Vec<&str> = t1.iter().chain(&v1).map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        let mut expected: Vec<String> = (0..25).map(|i| format!("p{i}")).collect();
        expected.sort();
        assert_eq!(ids, expected.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_fraction_and_empty_input() {
        let pairs: Vec<_> = (0..4).map(pair).collect();
        assert!(matches!(
            split(&pairs, 1.0, 0),
            Err(CorpusError::InvalidFraction(_))
        ));
        assert!(matches!(
            split(&pairs, 0.0, 0),
            Err(CorpusError::InvalidFraction(_))
        ));
        assert!(matches!(split(&[], 0.2, 0), Err(CorpusError::EmptySplit)));
    }

    #[test]
    fn render_single_turn() {
        let s = sample(&[(Role::Speaker, "hi")]);
        assert_eq!(render_context(&s, " "), "Speaker: hi");
    }

    #[test]
    fn render_two_turns_with_separator() {
        let s = sample(&[(Role::Speaker, "hi there"), (Role::Listener, "hello")]);
        assert_eq!(
            render_context(&s, " <sep> "),
            "Speaker: hi there <sep> Listener: hello"
        );
    }

    #[test]
    fn render_empty_separator_concatenates() {
        let s = sample(&[(Role::Speaker, "a"), (Role::Listener, "b")]);
        assert_eq!(render_context(&s, ""), "Speaker: aListener: b");
    }

    #[test]
    fn histogram_counts_by_mechanism() {
        let mut pairs: Vec<_> = (0..5).map(pair).collect();
        pairs[0]
            .levels
            .insert(Mechanism::EmotionalReaction, EmpathyLevel::Strong);
        pairs[1]
            .levels
            .insert(Mechanism::EmotionalReaction, EmpathyLevel::Weak);
        assert_eq!(
            level_histogram(&pairs, Mechanism::EmotionalReaction),
            [3, 1, 1]
        );
        assert_eq!(level_histogram(&pairs, Mechanism::Exploration), [0, 0, 0]);
    }

    #[test]
    fn mechanism_codes_are_stable() {
        assert_eq!(Mechanism::EmotionalReaction.index(), 0);
        assert_eq!(Mechanism::Interpretation.index(), 1);
        assert_eq!(Mechanism::Exploration.index(), 2);
        assert_eq!(EmpathyLevel::No.index(), 0);
        assert_eq!(EmpathyLevel::Weak.index(), 1);
        assert_eq!(EmpathyLevel::Strong.index(), 2);
    }
}
