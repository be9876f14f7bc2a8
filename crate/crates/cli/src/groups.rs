//! Groups files: either a full segmentation document or a short script that
//! starts from a preset and isolates spans, the way a user brushes text.
//!
//! ```json
//! { "preset": "sentence",
//!   "isolate": ["steak tartare,", {"start": 3, "end": 5}],
//!   "labels": {"steak tartare,": "dish"} }
//! ```

use std::collections::BTreeMap;

use grain_attr_core::segmentation::{
    preset_segmentation, Group, GroupId, PresetLevel, Segmentation, TokenizedText,
};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SpanRef {
    Phrase(String),
    Range { start: usize, end: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupScript {
    #[serde(default)]
    pub preset: Option<PresetLevel>,
    /// Explicit token index lists; every token must be covered once.
    #[serde(default)]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub isolate: Vec<SpanRef>,
    /// Labels keyed by the isolated phrase.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub enum GroupsFile {
    Segmentation(Segmentation),
    Script(GroupScript),
}

impl GroupsFile {
    /// Documents with an `input_hash` are segmentations; anything else is a script.
    pub fn parse(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if value.get("input_hash").is_some() {
            serde_json::from_value(value).map(GroupsFile::Segmentation)
        } else {
            serde_json::from_value(value).map(GroupsFile::Script)
        }
        .map_err(|e| e.to_string())
    }
}

/// First run of tokens whose texts equal the phrase's words.
pub fn find_phrase(tokens: &TokenizedText, phrase: &str) -> Option<std::ops::Range<usize>> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if words.is_empty() || words.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - words.len())
        .find(|&i| {
            words
                .iter()
                .enumerate()
                .all(|(k, w)| tokens.tokens[i + k].text == *w)
        })
        .map(|i| i..i + words.len())
}

pub fn resolve(file: GroupsFile, tokens: &TokenizedText) -> Result<Segmentation, String> {
    let script = match file {
        GroupsFile::Segmentation(seg) => {
            seg.check_input(tokens).map_err(|e| e.to_string())?;
            return Ok(seg);
        }
        GroupsFile::Script(script) => script,
    };
    let mut seg = match (&script.groups, script.preset) {
        (Some(_), Some(_)) => return Err("give either `groups` or `preset`, not both".into()),
        (Some(lists), None) => {
            let groups = lists
                .iter()
                .enumerate()
                .map(|(i, indices)| Group {
                    id: GroupId(i as u32),
                    label: None,
                    token_indices: indices.iter().copied().collect(),
                })
                .collect();
            Segmentation::from_groups(tokens, groups).map_err(|e| e.to_string())?
        }
        (None, preset) => preset_segmentation(tokens, preset.unwrap_or(PresetLevel::Word)),
    };
    for span in &script.isolate {
        let range = match span {
            SpanRef::Phrase(p) => find_phrase(tokens, p).ok_or_else(|| format!("phrase `{p}` not found in input"))?,
            SpanRef::Range { start, end } => *start..*end,
        };
        let first = range.start;
        seg = seg.isolate_span(range).map_err(|e| e.to_string())?;
        if let SpanRef::Phrase(p) = span {
            if let Some(label) = script.labels.get(p) {
                let pos = seg.group_position_of(first).expect("isolated token has a group");
                let id = seg.groups()[pos].id;
                seg = seg.relabel(id, Some(label.clone())).map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(seg)
}
