//! Shared runtime state: one HTTP client, one probability cache, and one rate
//! limiter per endpoint, so concurrent explanations share the request budget.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::evaluator::Evaluator;
use crate::model_client::{
    HttpChatClient, MockModel, ModelError, ModelKind, ModelSpec, ProbabilityCache, PromptScorer,
    RateLimiter, ResponseSource, RetryPolicy, ScoreError,
};
use crate::task_store::Task;

#[derive(Debug)]
pub struct Session {
    http: reqwest::Client,
    cache: Arc<ProbabilityCache>,
    limiters: Mutex<HashMap<String, Arc<RateLimiter>>>,
    retry: RetryPolicy,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Self {
            http: reqwest::Client::new(),
            cache: Arc::new(ProbabilityCache::new()),
            limiters: Mutex::new(HashMap::new()),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn cache(&self) -> &Arc<ProbabilityCache> {
        &self.cache
    }

    pub fn http(&self) -> &reqwest::Client {
        &self.http
    }

    /// The limiter for an endpoint at a given rate, created on first use.
    pub fn limiter(&self, endpoint: &str, rate: f64) -> Arc<RateLimiter> {
        let key = format!("{endpoint}@{rate}");
        let mut limiters = self.limiters.lock().expect("limiter registry lock");
        limiters
            .entry(key)
            .or_insert_with(|| Arc::new(RateLimiter::new(rate)))
            .clone()
    }

    pub fn source(&self, model: &ModelSpec) -> Result<Arc<dyn ResponseSource>, ModelError> {
        model.validate()?;
        match model.kind {
            ModelKind::Mock => {
                let spec = model.mock.clone().expect("validated mock spec");
                Ok(Arc::new(MockModel::new(spec)))
            }
            ModelKind::Http => {
                let endpoint = model.endpoint_url.as_deref().expect("validated endpoint");
                let limiter = self.limiter(endpoint, model.rate_limit_rps);
                let client = HttpChatClient::new(self.http.clone(), model, limiter)?
                    .with_retry(self.retry.clone());
                Ok(Arc::new(client))
            }
        }
    }

    /// A cached scorer for `task`'s model and evaluator.
    pub fn scorer(&self, task: &Task) -> Result<PromptScorer, ScoreError> {
        let source = self.source(&task.model)?;
        let evaluator = Evaluator::new(task.evaluator.clone(), &self.http)?;
        Ok(PromptScorer::new(source, evaluator, self.cache.clone(), &task.model))
    }
}
