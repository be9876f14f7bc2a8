//! The black-box model: an HTTP chat-completions client or a deterministic mock,
//! a vote-probability cache, and the sample-budget arithmetic.

pub mod cache;
pub mod http;
pub mod mock;
pub mod rate_limit;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, ProbabilityCache};
pub use http::{HttpChatClient, RetryPolicy, API_KEY_ENV};
pub use mock::{Interaction, MockModel, MockModelSpec, VoteMode};
pub use rate_limit::RateLimiter;

use crate::evaluator::{aggregate, Evaluator, EvaluatorError};

/// Samples per explanation the reference KernelSHAP configuration allows on
/// top of two per group.
pub const LIBRARY_SAMPLE_ALLOWANCE: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("time budget of {budget_s}s exhausted")]
    BudgetExhausted { budget_s: f64 },
    #[error("budget allows {affordable} samples but {required} are needed for {groups} groups")]
    BudgetTooSmall {
        groups: usize,
        affordable: usize,
        required: usize,
    },
    #[error("expected {expected} responses, endpoint returned {found}")]
    ShortResponse { expected: usize, found: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
}

impl ModelError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::InvalidSpec(_) => "invalid_model",
            ModelError::Endpoint(_) | ModelError::ShortResponse { .. } => "endpoint",
            ModelError::BudgetExhausted { .. } => "budget_exhausted",
            ModelError::BudgetTooSmall { .. } => "budget_too_small",
        }
    }
}

impl ScoreError {
    pub fn code(&self) -> &'static str {
        match self {
            ScoreError::Model(e) => e.code(),
            ScoreError::Evaluator(EvaluatorError::InvalidSpec(_)) => "invalid_evaluator",
            ScoreError::Evaluator(_) => "endpoint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Http,
    Mock,
}

fn default_votes() -> usize {
    10
}

fn default_temperature() -> f64 {
    1.0
}

fn default_rate() -> f64 {
    4.0
}

fn default_budget() -> f64 {
    600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    pub model_name: String,
    #[serde(default = "default_votes")]
    pub votes_per_prompt: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Requests per second the endpoint may receive.
    #[serde(default = "default_rate")]
    pub rate_limit_rps: f64,
    /// Wall-clock seconds one explanation may take.
    #[serde(default = "default_budget")]
    pub time_budget_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockModelSpec>,
}

impl ModelSpec {
    pub fn mock(mock: MockModelSpec) -> Self {
        Self {
            kind: ModelKind::Mock,
            endpoint_url: None,
            model_name: "mock".into(),
            votes_per_prompt: default_votes(),
            temperature: default_temperature(),
            rate_limit_rps: default_rate(),
            time_budget_s: default_budget(),
            mock: Some(mock),
        }
    }

    pub fn http(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: ModelKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            votes_per_prompt: default_votes(),
            temperature: default_temperature(),
            rate_limit_rps: default_rate(),
            time_budget_s: default_budget(),
            mock: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidSpec(msg.to_string()));
        if self.votes_per_prompt < 1 {
            return bad("votes_per_prompt must be at least 1");
        }
        if !(self.rate_limit_rps > 0.0 && self.rate_limit_rps.is_finite()) {
            return bad("rate_limit_rps must be positive");
        }
        if !(self.time_budget_s > 0.0 && self.time_budget_s.is_finite()) {
            return bad("time_budget_s must be positive");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be a non-negative number");
        }
        match self.kind {
            ModelKind::Http if self.endpoint_url.is_none() => bad("http models need endpoint_url"),
            ModelKind::Mock if self.mock.is_none() => bad("mock models need a mock spec"),
            _ => Ok(()),
        }
    }

    /// Logical evaluators judge a single response per prompt.
    pub fn with_evaluator_votes(&self, logical: bool) -> Self {
        let mut spec = self.clone();
        if logical {
            spec.votes_per_prompt = 1;
        }
        spec
    }

    /// floor(t_max · r_API / votes): coalitions the time budget can pay for.
    pub fn budget_sample_limit(&self) -> usize {
        let requests = self.time_budget_s * self.rate_limit_rps;
        // absorbs representation error such as 30 * 0.7 = 20.999…
        let coalitions = requests / self.votes_per_prompt as f64;
        (coalitions + 1e-9 * coalitions.max(1.0)).floor() as usize
    }

    /// Stable identity used in cache keys.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("model spec serializes")
    }
}

/// Sample cap for an explanation over `groups` groups: the library allowance
/// `2·M + 2048`, cut down to what the time budget affords.
pub fn effective_sample_cap(groups: usize, spec: &ModelSpec) -> Result<usize, ModelError> {
    if groups == 0 {
        return Err(ModelError::InvalidSpec("at least one group is required".into()));
    }
    let library = 2 * groups + LIBRARY_SAMPLE_ALLOWANCE;
    let affordable = spec.budget_sample_limit();
    let cap = library.min(affordable);
    let required = groups + 2;
    if cap < required {
        return Err(ModelError::BudgetTooSmall {
            groups,
            affordable: cap,
            required,
        });
    }
    Ok(cap)
}

/// Anything that answers a prompt with `n` free-text responses.
#[async_trait]
pub trait ResponseSource: Send + Sync {
    async fn sample_responses(&self, prompt: &str, n: usize) -> Result<Vec<String>, ModelError>;
}

/// Prompt → vote probability for one (model, evaluator) pair, memoized.
#[derive(Clone)]
pub struct PromptScorer {
    source: Arc<dyn ResponseSource>,
    evaluator: Evaluator,
    cache: Arc<ProbabilityCache>,
    model_key: String,
    votes: usize,
}

impl PromptScorer {
    pub fn new(
        source: Arc<dyn ResponseSource>,
        evaluator: Evaluator,
        cache: Arc<ProbabilityCache>,
        model: &ModelSpec,
    ) -> Self {
        let model = model.with_evaluator_votes(evaluator.spec().operator.is_logical());
        Self {
            source,
            evaluator,
            cache,
            model_key: model.fingerprint(),
            votes: model.votes_per_prompt,
        }
    }

    pub fn votes(&self) -> usize {
        self.votes
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn cache(&self) -> &Arc<ProbabilityCache> {
        &self.cache
    }

    /// Cached fraction of `votes` responses the evaluator marks true.
    pub async fn probability(&self, prompt: &str) -> Result<f64, ScoreError> {
        let key = CacheKey::new(&self.model_key, &self.evaluator.spec().fingerprint(), prompt);
        if let Some(p) = self.cache.get(&key) {
            return Ok(p);
        }
        let responses = self.source.sample_responses(prompt, self.votes).await?;
        if responses.len() != self.votes {
            return Err(ModelError::ShortResponse {
                expected: self.votes,
                found: responses.len(),
            }
            .into());
        }
        let mut votes = Vec::with_capacity(responses.len());
        for response in &responses {
            votes.push(self.evaluator.evaluate(response).await?);
        }
        let p = aggregate(&votes)?;
        self.cache.insert(key, p);
        Ok(p)
    }
}
