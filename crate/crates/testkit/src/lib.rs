//! In-process stub servers for exercising the HTTP surfaces without a real
//! model: a chat-completions endpoint and an NLI judge.
//!
//! Each [`StubServer`] runs on its own thread and runtime, so it can be used
//! from synchronous and asynchronous tests alike. Every request is logged with
//! its arrival time.

pub mod oracle;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// Produces the content of choice `i` for a prompt.
pub type ReplyFn = Arc<dyn Fn(&str, usize) -> String + Send + Sync>;

#[derive(Clone)]
pub struct StubConfig {
    pub reply: ReplyFn,
    /// The first `fail_first` chat requests get HTTP 503.
    pub fail_first: usize,
    /// Labels for (premise, hypothesis) pairs; anything else is `nli_default`.
    pub nli_labels: HashMap<(String, String), String>,
    pub nli_default: String,
    /// Artificial latency per request.
    pub latency: Duration,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self::fixed_reply("no")
    }
}

impl StubConfig {
    pub fn fixed_reply(text: &str) -> Self {
        let text = text.to_string();
        Self {
            reply: Arc::new(move |_, _| text.clone()),
            fail_first: 0,
            nli_labels: HashMap::new(),
            nli_default: "neutral".into(),
            latency: Duration::ZERO,
        }
    }

    pub fn with_reply(mut self, reply: impl Fn(&str, usize) -> String + Send + Sync + 'static) -> Self {
        self.reply = Arc::new(reply);
        self
    }

    pub fn with_nli(mut self, premise: &str, hypothesis: &str, label: &str) -> Self {
        self.nli_labels
            .insert((premise.to_string(), hypothesis.to_string()), label.to_string());
        self
    }
}

#[derive(Debug, Clone)]
pub struct LoggedRequest {
    pub path: String,
    pub at: Instant,
    pub body: Value,
    pub authorization: Option<String>,
}

struct Shared {
    config: StubConfig,
    log: Mutex<Vec<LoggedRequest>>,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn spawn(config: StubConfig) -> Self {
        let shared = Arc::new(Shared {
            config,
            log: Mutex::new(Vec::new()),
        });
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("stub runtime");
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                    .await
                    .expect("bind stub server");
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new()
                    .route("/chat/completions", post(chat))
                    .route("/v1/chat/completions", post(chat))
                    .route("/nli", post(nli))
                    .with_state(state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .expect("stub server");
            });
        });
        let addr = addr_rx.recv().expect("stub server address");
        Self {
            addr,
            shared,
            shutdown: Some(shutdown_tx),
            thread: Some(thread),
        }
    }

    /// Base URL for chat clients; `{base}/chat/completions` is served.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn nli_url(&self) -> String {
        format!("http://{}/nli", self.addr)
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn chat_requests(&self) -> Vec<LoggedRequest> {
        self.requests()
            .into_iter()
            .filter(|r| r.path.ends_with("/chat/completions"))
            .collect()
    }

    pub fn nli_requests(&self) -> Vec<LoggedRequest> {
        self.requests().into_iter().filter(|r| r.path == "/nli").collect()
    }

    /// Largest number of chat requests that arrived within any half-open
    /// window of length `window`.
    pub fn max_chat_requests_in(&self, window: Duration) -> usize {
        let mut times: Vec<Instant> = self.chat_requests().iter().map(|r| r.at).collect();
        times.sort();
        let mut best = 0;
        let mut lo = 0;
        for hi in 0..times.len() {
            while times[hi].duration_since(times[lo]) >= window {
                lo += 1;
            }
            best = best.max(hi - lo + 1);
        }
        best
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

fn record(shared: &Shared, path: &str, headers: &HeaderMap, body: &Value) -> usize {
    let mut log = shared.log.lock().unwrap();
    log.push(LoggedRequest {
        path: path.to_string(),
        at: Instant::now(),
        body: body.clone(),
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    });
    log.iter().filter(|r| r.path == path).count()
}

async fn chat(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let seen = record(&shared, "/chat/completions", &headers, &body);
    if !shared.config.latency.is_zero() {
        tokio::time::sleep(shared.config.latency).await;
    }
    if seen <= shared.config.fail_first {
        return (StatusCode::SERVICE_UNAVAILABLE, "stub: injected failure").into_response();
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    let n = body["n"].as_u64().unwrap_or(1) as usize;
    let choices: Vec<Value> = (0..n)
        .map(|i| {
            json!({
                "index": i,
                "message": {"role": "assistant", "content": (shared.config.reply)(prompt, i)},
                "finish_reason": "stop"
            })
        })
        .collect();
    Json(json!({
        "id": "stub",
        "object": "chat.completion",
        "model": body["model"],
        "choices": choices
    }))
    .into_response()
}

async fn nli(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    record(&shared, "/nli", &headers, &body);
    let premise = body["premise"].as_str().unwrap_or_default().to_string();
    let hypothesis = body["hypothesis"].as_str().unwrap_or_default().to_string();
    let label = shared
        .config
        .nli_labels
        .get(&(premise, hypothesis))
        .cloned()
        .unwrap_or_else(|| shared.config.nli_default.clone());
    Json(json!({ "label": label })).into_response()
}
