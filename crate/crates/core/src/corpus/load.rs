//! File loaders for the dialogue and annotated corpora.
//!
//! Files are UTF-8, comma-separated with RFC 4180 quoting, and may be
//! gzip-compressed (detected by a `.gz` extension). Rows that fail
//! validation abort the whole load so downstream splits stay deterministic.
//!
//! Dialogue schema: `conv_id, utterance_idx, role, text` plus optional
//! `emotion` and `situation` columns, which are parsed and discarded.
//! Annotated schema: `id, seek_post, response_post, level_er, level_ip,
//! level_ex` with each level in {0, 1, 2}.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{
    AnnotatedPair, CorpusError, DialogueSample, EmpathyLevel, Mechanism, Role, Utterance,
};

/// Dialogue corpus flavor.
///
/// `EmpatheticDialogues` expects literal `speaker`/`listener` roles.
/// `Pec` treats roles as opaque party ids: threads with more than two
/// parties are dropped, the first party to talk becomes the speaker, and
/// only the first response for any given context is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueFormat {
    EmpatheticDialogues,
    Pec,
}

struct RawTurn {
    row: usize,
    utterance_idx: u64,
    role: String,
    text: String,
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

fn column_index(
    headers: &csv::StringRecord,
    name: &str,
    path: &Path,
) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CorpusError::MissingColumn {
            path: path.display().to_string(),
            column: name.to_string(),
        })
}

fn field<'a>(
    record: &'a csv::StringRecord,
    idx: usize,
    row: usize,
    name: &str,
    path: &Path,
) -> Result<&'a str, CorpusError> {
    record.get(idx).ok_or_else(|| CorpusError::MalformedRow {
        path: path.display().to_string(),
        row,
        field: name.to_string(),
        reason: "missing value".into(),
    })
}

/// Load a dialogue corpus and expand every conversation into one
/// [`DialogueSample`] per listener turn (context = all prior turns, target
/// = that listener turn). Adjacent same-role turns are merged before
/// expansion; emotion and situation columns are discarded.
pub fn load_dialogues(
    path: &Path,
    format: DialogueFormat,
) -> Result<Vec<DialogueSample>, CorpusError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open_reader(path)?);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRow {
            path: display.clone(),
            row: 0,
            field: "header".into(),
            reason: e.to_string(),
        })?
        .clone();
    let conv_col = column_index(&headers, "conv_id", path)?;
    let idx_col = column_index(&headers, "utterance_idx", path)?;
    let role_col = column_index(&headers, "role", path)?;
    let text_col = column_index(&headers, "text", path)?;

    // Group turns by conversation, preserving first-appearance order.
    let mut conv_order: Vec<String> = Vec::new();
    let mut conversations: std::collections::HashMap<String, Vec<RawTurn>> =
        std::collections::HashMap::new();
    let mut row = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::MalformedRow {
            path: display.clone(),
            row,
            field: "record".into(),
            reason: e.to_string(),
        })?;
        let conv_id = field(&record, conv_col, row, "conv_id", path)?.to_string();
        if conv_id.trim().is_empty() {
            return Err(CorpusError::MalformedRow {
                path: display.clone(),
                row,
                field: "conv_id".into(),
                reason: "empty conversation id".into(),
            });
        }
        let idx_raw = field(&record, idx_col, row, "utterance_idx", path)?;
        let utterance_idx =
            idx_raw
                .trim()
                .parse::<u64>()
                .map_err(|_| CorpusError::MalformedRow {
                    path: display.clone(),
                    row,
                    field: "utterance_idx".into(),
                    reason: format!("`{idx_raw}` is not a non-negative integer"),
                })?;
        let role = field(&record, role_col, row, "role", path)?.trim().to_string();
        if role.is_empty() {
            return Err(CorpusError::MalformedRow {
                path: display.clone(),
                row,
                field: "role".into(),
                reason: "empty role".into(),
            });
        }
        let text = field(&record, text_col, row, "text", path)?.trim().to_string();
        if text.is_empty() {
            return Err(CorpusError::MalformedRow {
                path: display.clone(),
                row,
                field: "text".into(),
                reason: "utterance text is empty".into(),
            });
        }
        if !conversations.contains_key(&conv_id) {
            conv_order.push(conv_id.clone());
        }
        conversations.entry(conv_id).or_default().push(RawTurn {
            row,
            utterance_idx,
            role,
            text,
        });
        row += 1;
    }
    if row == 0 {
        return Err(CorpusError::Empty { path: display });
    }

    let mut samples = Vec::new();
    let mut seen_contexts: std::collections::HashSet<String> = std::collections::HashSet::new();
    for conv_id in conv_order {
        let mut turns = conversations.remove(&conv_id).expect("conversation exists");
        turns.sort_by_key(|t| t.utterance_idx);

        let roled = match format {
            DialogueFormat::EmpatheticDialogues => map_literal_roles(&conv_id, &turns, path)?,
            DialogueFormat::Pec => match map_party_roles(&turns) {
                Some(roled) => roled,
                None => continue, // non-dyadic thread
            },
        };

        let merged = merge_adjacent_same_role(roled);
        if merged.is_empty() {
            continue;
        }
        if merged[0].role != Role::Speaker {
            return Err(CorpusError::MalformedConversation {
                path: path.display().to_string(),
                conv_id,
                reason: "first turn does not belong to the speaker".into(),
            });
        }

        let mut listener_ordinal = 0usize;
        for i in 1..merged.len() {
            if merged[i].role != Role::Listener {
                continue;
            }
            let context: Vec<Utterance> = merged[..i].to_vec();
            if format == DialogueFormat::Pec {
                let key = context
                    .iter()
                    .map(|u| format!("{}\u{1f}{}", u.role.tag(), u.text))
                    .collect::<Vec<_>>()
                    .join("\u{1e}");
                if !seen_contexts.insert(key) {
                    continue; // keep only the first response per context
                }
            }
            samples.push(DialogueSample {
                id: format!("{conv_id}#{listener_ordinal}"),
                context,
                target: merged[i].text.clone(),
            });
            listener_ordinal += 1;
        }
    }
    Ok(samples)
}

fn map_literal_roles(
    conv_id: &str,
    turns: &[RawTurn],
    path: &Path,
) -> Result<Vec<Utterance>, CorpusError> {
    let _ = conv_id;
    turns
        .iter()
        .map(|t| {
            let role = match t.role.to_lowercase().as_str() {
                "speaker" => Role::Speaker,
                "listener" => Role::Listener,
                other => {
                    return Err(CorpusError::MalformedRow {
                        path: path.display().to_string(),
                        row: t.row,
                        field: "role".into(),
                        reason: format!("`{other}` is neither `speaker` nor `listener`"),
                    })
                }
            };
            Ok(Utterance {
                role,
                text: t.text.clone(),
            })
        })
        .collect()
}

/// Opaque party ids: exactly two parties qualify, the first one to talk is
/// the speaker. Returns `None` for non-dyadic threads.
fn map_party_roles(turns: &[RawTurn]) -> Option<Vec<Utterance>> {
    let mut parties: Vec<&str> = Vec::new();
    for t in turns {
        if !parties.contains(&t.role.as_str()) {
            parties.push(&t.role);
        }
        if parties.len() > 2 {
            return None;
        }
    }
    if parties.len() != 2 {
        return None;
    }
    let speaker = parties[0];
    Some(
        turns
            .iter()
            .map(|t| Utterance {
                role: if t.role == speaker {
                    Role::Speaker
                } else {
                    Role::Listener
                },
                text: t.text.clone(),
            })
            .collect(),
    )
}

fn merge_adjacent_same_role(turns: Vec<Utterance>) -> Vec<Utterance> {
    let mut merged: Vec<Utterance> = Vec::with_capacity(turns.len());
    for turn in turns {
        match merged.last_mut() {
            Some(last) if last.role == turn.role => {
                last.text.push(' ');
                last.text.push_str(&turn.text);
            }
            _ => merged.push(turn),
        }
    }
    merged
}

fn load_annotated_inner(
    path: &Path,
    mechanisms: &[Mechanism],
) -> Result<Vec<AnnotatedPair>, CorpusError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open_reader(path)?);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRow {
            path: display.clone(),
            row: 0,
            field: "header".into(),
            reason: e.to_string(),
        })?
        .clone();
    let id_col = column_index(&headers, "id", path)?;
    let seek_col = column_index(&headers, "seek_post", path)?;
    let resp_col = column_index(&headers, "response_post", path)?;
    let level_cols: Vec<(Mechanism, usize, &'static str)> = mechanisms
        .iter()
        .map(|&m| {
            let name = level_column(m);
            column_index(&headers, name, path).map(|idx| (m, idx, name))
        })
        .collect::<Result<_, _>>()?;

    let mut pairs = Vec::new();
    let mut row = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::MalformedRow {
            path: display.clone(),
            row,
            field: "record".into(),
            reason: e.to_string(),
        })?;
        let id = field(&record, id_col, row, "id", path)?.to_string();
        let seek_post = field(&record, seek_col, row, "seek_post", path)?.trim().to_string();
        let response_post = field(&record, resp_col, row, "response_post", path)?
            .trim()
            .to_string();
        if seek_post.is_empty() {
            return Err(CorpusError::MalformedRow {
                path: display.clone(),
                row,
                field: "seek_post".into(),
                reason: "empty post".into(),
            });
        }
        if response_post.is_empty() {
            return Err(CorpusError::MalformedRow {
                path: display.clone(),
                row,
                field: "response_post".into(),
                reason: "empty post".into(),
            });
        }
        let mut levels = std::collections::BTreeMap::new();
        for &(mechanism, idx, name) in &level_cols {
            let raw = field(&record, idx, row, name, path)?.trim();
            let level = raw
                .parse::<u8>()
                .ok()
                .and_then(EmpathyLevel::from_code)
                .ok_or_else(|| CorpusError::MalformedRow {
                    path: display.clone(),
                    row,
                    field: name.to_string(),
                    reason: format!("level `{raw}` is not in {{0, 1, 2}}"),
                })?;
            levels.insert(mechanism, level);
        }
        pairs.push(AnnotatedPair {
            id,
            seek_post,
            response_post,
            levels,
        });
        row += 1;
    }
    if pairs.is_empty() {
        return Err(CorpusError::Empty { path: display });
    }
    Ok(pairs)
}

fn level_column(mechanism: Mechanism) -> &'static str {
    match mechanism {
        Mechanism::EmotionalReaction => "level_er",
        Mechanism::Interpretation => "level_ip",
        Mechanism::Exploration => "level_ex",
    }
}

/// Load annotated pairs keeping only one mechanism's level.
pub fn load_annotated_pairs(
    path: &Path,
    mechanism: Mechanism,
) -> Result<Vec<AnnotatedPair>, CorpusError> {
    load_annotated_inner(path, &[mechanism])
}

/// Load annotated pairs with all three mechanism levels.
pub fn load_annotated_pairs_joint(path: &Path) -> Result<Vec<AnnotatedPair>, CorpusError> {
    load_annotated_inner(path, &Mechanism::ALL)
}
