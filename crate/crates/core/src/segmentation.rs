//! Word tokenization and partitions of words into explanation groups.
//!
//! A [`Segmentation`] is always a total partition of the token indices of one
//! input text: every token belongs to exactly one non-empty group. Edits never
//! mutate in place; they return a new segmentation whose surviving groups keep
//! their ids and whose new groups receive fresh ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentationError {
    #[error("input text is empty or whitespace-only")]
    EmptyInput,
    #[error("invalid token range {start}..{end} for {len} tokens")]
    InvalidRange { start: usize, end: usize, len: usize },
    #[error("unknown group id {0}")]
    UnknownGroup(GroupId),
    #[error("merge needs at least two distinct groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} has no tokens")]
    EmptyGroup(GroupId),
    #[error("duplicate group id {0}")]
    DuplicateGroupId(GroupId),
    #[error("token {index} is out of bounds for {len} tokens")]
    TokenOutOfBounds { index: usize, len: usize },
    #[error("token {0} is assigned to more than one group")]
    OverlappingGroups(usize),
    #[error("token {0} is not assigned to any group")]
    OrphanToken(usize),
    #[error("segmentation was built for input {found}, expected {expected}")]
    InputMismatch { expected: String, found: String },
}

/// One whitespace-delimited word of the input, punctuation attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordToken {
    pub index: usize,
    pub text: String,
    /// Byte offsets `[start, end)` into the input text.
    pub char_span: (usize, usize),
    pub trailing_ws: String,
}

/// The token list of an input plus any whitespace that preceded the first word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub leading_ws: String,
    pub tokens: Vec<WordToken>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rebuilds the original text byte-for-byte.
    pub fn reconstruct(&self) -> String {
        let mut out = self.leading_ws.clone();
        for token in &self.tokens {
            out.push_str(&token.text);
            out.push_str(&token.trailing_ws);
        }
        out
    }

    pub fn input_hash(&self) -> String {
        input_hash(&self.reconstruct())
    }
}

/// Splits `text` on runs of Unicode whitespace.
pub fn tokenize_words(text: &str) -> Result<TokenizedText, SegmentationError> {
    if text.trim().is_empty() {
        return Err(SegmentationError::EmptyInput);
    }

    let mut leading_end = 0;
    let mut tokens: Vec<WordToken> = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut ws_start: Option<usize> = None;

    for (pos, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(start) = word_start.take() {
                tokens.push(WordToken {
                    index: tokens.len(),
                    text: text[start..pos].to_string(),
                    char_span: (start, pos),
                    trailing_ws: String::new(),
                });
                ws_start = Some(pos);
            } else if tokens.is_empty() {
                leading_end = pos + ch.len_utf8();
            }
        } else if word_start.is_none() {
            if let (Some(ws), Some(last)) = (ws_start.take(), tokens.last_mut()) {
                last.trailing_ws = text[ws..pos].to_string();
            }
            word_start = Some(pos);
        }
    }
    match word_start {
        Some(start) => tokens.push(WordToken {
            index: tokens.len(),
            text: text[start..].to_string(),
            char_span: (start, text.len()),
            trailing_ws: String::new(),
        }),
        None => {
            if let (Some(ws), Some(last)) = (ws_start, tokens.last_mut()) {
                last.trailing_ws = text[ws..].to_string();
            }
        }
    }

    Ok(TokenizedText {
        leading_ws: text[..leading_end].to_string(),
        tokens,
    })
}

/// Hex SHA-256 of the input text; ties a segmentation to the text it partitions.
pub fn input_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u32);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: GroupId,
    #[serde(default)]
    pub label: Option<String>,
    pub token_indices: BTreeSet<usize>,
}

impl Group {
    pub fn len(&self) -> usize {
        self.token_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_indices.is_empty()
    }

    fn first_token(&self) -> usize {
        self.token_indices.first().copied().unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetLevel {
    Word,
    Sentence,
    Paragraph,
}

impl std::str::FromStr for PresetLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Self::Word),
            "sentence" => Ok(Self::Sentence),
            "paragraph" => Ok(Self::Paragraph),
            other => Err(format!("unknown preset level `{other}`")),
        }
    }
}

/// Serialized form; validated into a [`Segmentation`] on the way in.
#[derive(Serialize, Deserialize)]
struct SegmentationRepr {
    input_hash: String,
    token_count: usize,
    next_id: u32,
    groups: Vec<Group>,
}

/// A total partition of an input's tokens into groups.
///
/// Groups are kept ordered by their smallest token index, which is also the
/// bit order of coalition masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SegmentationRepr", into = "SegmentationRepr")]
pub struct Segmentation {
    input_hash: String,
    token_count: usize,
    next_id: u32,
    groups: Vec<Group>,
    group_of: Vec<usize>,
}

impl TryFrom<SegmentationRepr> for Segmentation {
    type Error = SegmentationError;

    fn try_from(repr: SegmentationRepr) -> Result<Self, Self::Error> {
        let mut seg = Segmentation::build(repr.input_hash, repr.token_count, repr.groups)?;
        seg.next_id = seg.next_id.max(repr.next_id);
        Ok(seg)
    }
}

impl From<Segmentation> for SegmentationRepr {
    fn from(seg: Segmentation) -> Self {
        SegmentationRepr {
            input_hash: seg.input_hash,
            token_count: seg.token_count,
            next_id: seg.next_id,
            groups: seg.groups,
        }
    }
}

impl Segmentation {
    /// Validates `groups` as a partition of `tokens` and orders them.
    pub fn from_groups(
        tokens: &TokenizedText,
        groups: Vec<Group>,
    ) -> Result<Self, SegmentationError> {
        Self::build(tokens.input_hash(), tokens.len(), groups)
    }

    fn build(
        input_hash: String,
        token_count: usize,
        mut groups: Vec<Group>,
    ) -> Result<Self, SegmentationError> {
        let mut ids = BTreeSet::new();
        let mut group_of = vec![usize::MAX; token_count];
        for group in &groups {
            if !ids.insert(group.id) {
                return Err(SegmentationError::DuplicateGroupId(group.id));
            }
            if group.is_empty() {
                return Err(SegmentationError::EmptyGroup(group.id));
            }
        }
        groups.sort_by_key(Group::first_token);
        for (pos, group) in groups.iter().enumerate() {
            for &t in &group.token_indices {
                let slot = group_of.get_mut(t).ok_or(SegmentationError::TokenOutOfBounds {
                    index: t,
                    len: token_count,
                })?;
                if *slot != usize::MAX {
                    return Err(SegmentationError::OverlappingGroups(t));
                }
                *slot = pos;
            }
        }
        if let Some(orphan) = group_of.iter().position(|&g| g == usize::MAX) {
            return Err(SegmentationError::OrphanToken(orphan));
        }
        let next_id = ids.last().map_or(0, |id| id.0 + 1);
        Ok(Self {
            input_hash,
            token_count,
            next_id,
            groups,
            group_of,
        })
    }

    pub fn input_hash(&self) -> &str {
        &self.input_hash
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_ids(&self) -> Vec<GroupId> {
        self.groups.iter().map(|g| g.id).collect()
    }

    /// Position of the group owning token `index`.
    pub fn group_position_of(&self, index: usize) -> Option<usize> {
        self.group_of.get(index).copied()
    }

    pub fn position_of(&self, id: GroupId) -> Result<usize, SegmentationError> {
        self.groups
            .iter()
            .position(|g| g.id == id)
            .ok_or(SegmentationError::UnknownGroup(id))
    }

    pub fn group(&self, id: GroupId) -> Result<&Group, SegmentationError> {
        self.position_of(id).map(|pos| &self.groups[pos])
    }

    /// The groups as bare token sets, ignoring ids and labels.
    pub fn partition(&self) -> Vec<BTreeSet<usize>> {
        self.groups.iter().map(|g| g.token_indices.clone()).collect()
    }

    pub fn check_input(&self, tokens: &TokenizedText) -> Result<(), SegmentationError> {
        let expected = tokens.input_hash();
        if expected != self.input_hash || tokens.len() != self.token_count {
            return Err(SegmentationError::InputMismatch {
                expected,
                found: self.input_hash.clone(),
            });
        }
        Ok(())
    }

    /// Tokens inside `range` become one new group; the groups they came from keep
    /// whatever is left over, or disappear when nothing is left.
    pub fn isolate_span(&self, range: Range<usize>) -> Result<Self, SegmentationError> {
        if range.start >= range.end || range.end > self.token_count {
            return Err(SegmentationError::InvalidRange {
                start: range.start,
                end: range.end,
                len: self.token_count,
            });
        }
        let span: BTreeSet<usize> = range.collect();
        if self.groups.iter().any(|g| g.token_indices == span) {
            return Ok(self.clone());
        }

        let mut next_id = self.next_id;
        let mut groups: Vec<Group> = self
            .groups
            .iter()
            .filter_map(|g| {
                let rest: BTreeSet<usize> = g.token_indices.difference(&span).copied().collect();
                (!rest.is_empty()).then(|| Group {
                    id: g.id,
                    label: g.label.clone(),
                    token_indices: rest,
                })
            })
            .collect();
        groups.push(Group {
            id: GroupId(next_id),
            label: None,
            token_indices: span,
        });
        next_id += 1;
        self.rebuild(groups, next_id)
    }

    /// Replaces the listed groups by their union, which takes a fresh id.
    pub fn merge_groups(&self, ids: &[GroupId]) -> Result<Self, SegmentationError> {
        let unique: BTreeSet<GroupId> = ids.iter().copied().collect();
        for id in &unique {
            self.position_of(*id)?;
        }
        if unique.len() < 2 {
            return Err(SegmentationError::TooFewGroups(unique.len()));
        }
        let union: BTreeSet<usize> = self
            .groups
            .iter()
            .filter(|g| unique.contains(&g.id))
            .flat_map(|g| g.token_indices.iter().copied())
            .collect();
        let mut groups: Vec<Group> = self
            .groups
            .iter()
            .filter(|g| !unique.contains(&g.id))
            .cloned()
            .collect();
        groups.push(Group {
            id: GroupId(self.next_id),
            label: None,
            token_indices: union,
        });
        self.rebuild(groups, self.next_id + 1)
    }

    /// Sets or clears a group's display label.
    pub fn relabel(&self, id: GroupId, label: Option<String>) -> Result<Self, SegmentationError> {
        let pos = self.position_of(id)?;
        let mut out = self.clone();
        out.groups[pos].label = label;
        Ok(out)
    }

    fn rebuild(&self, groups: Vec<Group>, next_id: u32) -> Result<Self, SegmentationError> {
        let mut seg = Self::build(self.input_hash.clone(), self.token_count, groups)?;
        seg.next_id = seg.next_id.max(next_id);
        Ok(seg)
    }
}

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '»', '”', '’'];

fn ends_sentence(token: &WordToken) -> bool {
    let core = token.text.trim_end_matches(CLOSERS);
    matches!(core.chars().last(), Some('.' | '!' | '?'))
}

fn ends_paragraph(token: &WordToken) -> bool {
    token.trailing_ws.matches('\n').count() >= 2
}

/// One of the built-in granularities.
///
/// Sentence groups also break at paragraph boundaries so that a heading
/// without final punctuation does not swallow the next paragraph.
pub fn preset_segmentation(tokens: &TokenizedText, level: PresetLevel) -> Segmentation {
    let mut groups: Vec<BTreeSet<usize>> = Vec::new();
    let mut current = BTreeSet::new();
    let last = tokens.len().saturating_sub(1);
    for token in &tokens.tokens {
        current.insert(token.index);
        let boundary = match level {
            PresetLevel::Word => true,
            PresetLevel::Sentence => ends_sentence(token) || ends_paragraph(token),
            PresetLevel::Paragraph => ends_paragraph(token),
        };
        if boundary || token.index == last {
            groups.push(std::mem::take(&mut current));
        }
    }
    let groups = groups
        .into_iter()
        .enumerate()
        .map(|(i, token_indices)| Group {
            id: GroupId(i as u32),
            label: None,
            token_indices,
        })
        .collect();
    Segmentation::build(tokens.input_hash(), tokens.len(), groups)
        .expect("preset groups always partition the tokens")
}

/// Text of a group's tokens joined by single spaces, for tables and labels.
pub fn group_text(tokens: &TokenizedText, group: &Group) -> String {
    let words: Vec<&str> = group
        .token_indices
        .iter()
        .filter_map(|&i| tokens.tokens.get(i).map(|t| t.text.as_str()))
        .collect();
    words.join(" ")
}

/// Group sizes keyed by id.
pub fn group_sizes(seg: &Segmentation) -> BTreeMap<GroupId, usize> {
    seg.groups().iter().map(|g| (g.id, g.len())).collect()
}
