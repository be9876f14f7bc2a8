//! Chat-completions wire client.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rate_limit::RateLimiter;
use super::{ModelError, ModelSpec, ResponseSource};

/// Environment variable holding the bearer token for the model endpoint.
pub const API_KEY_ENV: &str = "GRAIN_ATTR_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
            request_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Error)]
pub enum HttpFailure {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
}

impl HttpFailure {
    fn is_transient(&self) -> bool {
        match self {
            HttpFailure::Transport(_) => true,
            HttpFailure::Status { status, .. } => *status == 429 || *status >= 500,
            HttpFailure::Decode(_) => false,
        }
    }
}

/// POSTs `body` as JSON and decodes the reply, retrying transient failures
/// with exponential backoff. Every attempt waits on `limiter` first.
pub async fn post_json_with_retry<B, T>(
    http: &reqwest::Client,
    url: &str,
    bearer: Option<&str>,
    body: &B,
    retry: &RetryPolicy,
    limiter: Option<&RateLimiter>,
) -> Result<T, HttpFailure>
where
    B: Serialize + ?Sized,
    T: DeserializeOwned,
{
    let mut backoff = retry.initial_backoff;
    let mut attempt = 0;
    loop {
        if let Some(limiter) = limiter {
            limiter.acquire().await;
        }
        let result = post_once(http, url, bearer, body, retry.request_timeout).await;
        match result {
            Ok(value) => return Ok(value),
            Err(err) if err.is_transient() && attempt < retry.max_retries => {
                tracing::warn!(%url, attempt, error = %err, "retrying request");
                tokio::time::sleep(backoff).await;
                backoff *= 2;
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

async fn post_once<B, T>(
    http: &reqwest::Client,
    url: &str,
    bearer: Option<&str>,
    body: &B,
    timeout: Duration,
) -> Result<T, HttpFailure>
where
    B: Serialize + ?Sized,
    T: DeserializeOwned,
{
    let mut request = http.post(url).json(body).timeout(timeout);
    if let Some(token) = bearer {
        request = request.bearer_auth(token);
    }
    let response = request
        .send()
        .await
        .map_err(|e| HttpFailure::Transport(e.to_string()))?;
    let status = response.status();
    let bytes = response
        .bytes()
        .await
        .map_err(|e| HttpFailure::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(HttpFailure::Status {
            status: status.as_u16(),
            body: String::from_utf8_lossy(&bytes).chars().take(200).collect(),
        });
    }
    serde_json::from_slice(&bytes).map_err(|e| HttpFailure::Decode(e.to_string()))
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    n: usize,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// Client for one chat-completions endpoint. Clones share the rate limiter.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    http: reqwest::Client,
    url: String,
    model_name: String,
    temperature: f64,
    api_key: Option<String>,
    limiter: Arc<RateLimiter>,
    retry: RetryPolicy,
}

impl HttpChatClient {
    pub fn new(http: reqwest::Client, spec: &ModelSpec, limiter: Arc<RateLimiter>) -> Result<Self, ModelError> {
        let endpoint = spec
            .endpoint_url
            .as_deref()
            .ok_or_else(|| ModelError::InvalidSpec("http models need endpoint_url".into()))?;
        Ok(Self {
            http,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model_name: spec.model_name.clone(),
            temperature: spec.temperature,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            limiter,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

#[async_trait]
impl ResponseSource for HttpChatClient {
    async fn sample_responses(&self, prompt: &str, n: usize) -> Result<Vec<String>, ModelError> {
        let body = ChatRequest {
            model: &self.model_name,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            n,
            temperature: self.temperature,
        };
        let reply: ChatResponse = post_json_with_retry(
            &self.http,
            &self.url,
            self.api_key.as_deref(),
            &body,
            &self.retry,
            Some(&self.limiter),
        )
        .await
        .map_err(|e| ModelError::Endpoint(e.to_string()))?;
        let responses: Vec<String> = reply
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect();
        if responses.len() != n {
            return Err(ModelError::ShortResponse {
                expected: n,
                found: responses.len(),
            });
        }
        Ok(responses)
    }
}
