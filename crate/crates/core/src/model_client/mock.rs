//! Deterministic stand-in models.
//!
//! A mock scores a prompt as `bias + Σ weight(keyword present) + Σ weight(all
//! keywords of an interaction present)`, clamped to [0, 1] unless disabled.
//! How that score becomes votes depends on [`VoteMode`]; in every mode the
//! same prompt always yields the same responses.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, ResponseSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    /// Every vote is the true response iff score ≥ threshold.
    #[default]
    Threshold,
    /// round(score · n) votes are true.
    Proportional,
    /// Vote i is true iff a prompt-seeded uniform draw falls below the score.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub all_of: Vec<String>,
    pub weight: f64,
}

fn default_true() -> bool {
    true
}

fn default_threshold() -> f64 {
    0.5
}

fn default_yes() -> String {
    "yes".into()
}

fn default_no() -> String {
    "no".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModelSpec {
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub keyword_weights: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interactions: Vec<Interaction>,
    #[serde(default = "default_true")]
    pub clamp: bool,
    #[serde(default)]
    pub votes: VoteMode,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_yes")]
    pub response_if_true: String,
    #[serde(default = "default_no")]
    pub response_if_false: String,
}

impl Default for MockModelSpec {
    fn default() -> Self {
        Self {
            bias: 0.0,
            keyword_weights: BTreeMap::new(),
            interactions: Vec::new(),
            clamp: true,
            votes: VoteMode::Threshold,
            threshold: default_threshold(),
            response_if_true: default_yes(),
            response_if_false: default_no(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockModel {
    spec: MockModelSpec,
}

impl MockModel {
    pub fn new(spec: MockModelSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &MockModelSpec {
        &self.spec
    }

    /// Score before vote quantization.
    pub fn raw_score(&self, prompt: &str) -> f64 {
        let mut score = self.spec.bias;
        for (keyword, weight) in &self.spec.keyword_weights {
            if prompt.contains(keyword.as_str()) {
                score += weight;
            }
        }
        for interaction in &self.spec.interactions {
            if interaction.all_of.iter().all(|k| prompt.contains(k.as_str())) {
                score += interaction.weight;
            }
        }
        if self.spec.clamp {
            score.clamp(0.0, 1.0)
        } else {
            score
        }
    }

    /// Truth value of each of `n` votes.
    pub fn votes(&self, prompt: &str, n: usize) -> Vec<bool> {
        let score = self.raw_score(prompt);
        match self.spec.votes {
            VoteMode::Threshold => vec![score >= self.spec.threshold; n],
            VoteMode::Proportional => {
                let yes = (score * n as f64).round().clamp(0.0, n as f64) as usize;
                (0..n).map(|i| i < yes).collect()
            }
            VoteMode::Sampled => (0..n).map(|i| uniform(prompt, i) < score).collect(),
        }
    }

    /// Fraction of true votes out of `n`.
    pub fn probability(&self, prompt: &str, n: usize) -> f64 {
        let votes = self.votes(prompt, n);
        votes.iter().filter(|&&v| v).count() as f64 / n as f64
    }

    pub fn responses(&self, prompt: &str, n: usize) -> Vec<String> {
        self.votes(prompt, n)
            .into_iter()
            .map(|v| {
                if v {
                    self.spec.response_if_true.clone()
                } else {
                    self.spec.response_if_false.clone()
                }
            })
            .collect()
    }
}

/// Uniform [0, 1) value fixed by (prompt, vote index).
fn uniform(prompt: &str, vote: usize) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hasher.update((vote as u64).to_le_bytes());
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

#[async_trait]
impl ResponseSource for MockModel {
    async fn sample_responses(&self, prompt: &str, n: usize) -> Result<Vec<String>, ModelError> {
        Ok(self.responses(prompt, n))
    }
}
