//! Rendering prompts for coalitions of groups.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::{GroupId, Segmentation, SegmentationError, TokenizedText};

pub const PLACEHOLDER: &str = "{input}";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerturbationError {
    #[error("template must contain exactly one `{{input}}` placeholder, found {0}")]
    Placeholder(usize),
    #[error("mask has {found} bits but the segmentation has {expected} groups")]
    MaskLengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
}

/// Presence bit per group, in segmentation group order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoalitionMask(Vec<bool>);

impl CoalitionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn full(groups: usize) -> Self {
        Self(vec![true; groups])
    }

    pub fn empty(groups: usize) -> Self {
        Self(vec![false; groups])
    }

    pub fn from_members(groups: usize, members: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; groups];
        for m in members {
            bits[m] = true;
        }
        Self(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of groups present.
    pub fn size(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| !b).collect())
    }

    pub fn contains(&self, group: usize) -> bool {
        self.0[group]
    }

    /// True when every group present here is also present in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| !a || *b)
    }
}

impl fmt::Display for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub fn check_template(template: &str) -> Result<(), PerturbationError> {
    match template.matches(PLACEHOLDER).count() {
        1 => Ok(()),
        n => Err(PerturbationError::Placeholder(n)),
    }
}

/// The input text with every token of an absent group deleted.
///
/// Between two surviving tokens the left token's own whitespace is kept,
/// unless a newline-bearing run was dropped in between, in which case the run
/// with the most newlines wins. The text's final whitespace stays at the end.
pub fn render_input(
    tokens: &TokenizedText,
    seg: &Segmentation,
    mask: &CoalitionMask,
) -> Result<String, PerturbationError> {
    if mask.len() != seg.len() {
        return Err(PerturbationError::MaskLengthMismatch {
            expected: seg.len(),
            found: mask.len(),
        });
    }
    let kept: Vec<usize> = tokens
        .tokens
        .iter()
        .filter(|t| {
            seg.group_position_of(t.index)
                .is_some_and(|pos| mask.contains(pos))
        })
        .map(|t| t.index)
        .collect();
    let Some(&last_kept) = kept.last() else {
        return Ok(String::new());
    };

    let mut out = tokens.leading_ws.clone();
    for pair in kept.windows(2) {
        let (left, right) = (pair[0], pair[1]);
        out.push_str(&tokens.tokens[left].text);
        out.push_str(separator(tokens, left, right));
    }
    out.push_str(&tokens.tokens[last_kept].text);
    let final_ws = &tokens.tokens[tokens.len() - 1].trailing_ws;
    out.push_str(final_ws);
    Ok(out)
}

fn separator(tokens: &TokenizedText, left: usize, right: usize) -> &str {
    let own = tokens.tokens[left].trailing_ws.as_str();
    let newlines = |s: &str| s.matches('\n').count();
    tokens.tokens[left + 1..right]
        .iter()
        .map(|t| t.trailing_ws.as_str())
        .fold(own, |best, ws| {
            if newlines(ws) > newlines(best) {
                ws
            } else {
                best
            }
        })
}

/// Full prompt for a coalition: the rendered input substituted into the template.
pub fn render_coalition(
    template: &str,
    tokens: &TokenizedText,
    seg: &Segmentation,
    mask: &CoalitionMask,
) -> Result<String, PerturbationError> {
    check_template(template)?;
    let input = render_input(tokens, seg, mask)?;
    Ok(template.replacen(PLACEHOLDER, &input, 1))
}

/// Share of all words that belong to the listed groups.
pub fn word_fraction(seg: &Segmentation, ids: &[GroupId]) -> Result<f64, PerturbationError> {
    let mut words = 0usize;
    for id in ids {
        words += seg.group(*id)?.len();
    }
    Ok(words as f64 / seg.token_count() as f64)
}
