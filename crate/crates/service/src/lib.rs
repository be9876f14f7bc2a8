//! HTTP API over the attribution core.
//!
//! Tasks, explanations and reports live in a [`TaskStore`]; attribution and
//! fidelity runs are background jobs polled through `GET /jobs/{id}`.

pub mod config;
pub mod error;
pub mod jobs;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use grain_attr_core::attribution::{explain, ExplainOptions, Progress};
use grain_attr_core::evaluator::EvaluatorSpec;
use grain_attr_core::fidelity::evaluate_fidelity;
use grain_attr_core::model_client::{effective_sample_cap, ModelSpec};
use grain_attr_core::segmentation::{preset_segmentation, GroupId, PresetLevel, Segmentation};
use grain_attr_core::task_store::{to_document, DocumentKind, ExplanationRecord, Task, TaskStore};
use grain_attr_core::{Clock, Session};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

pub use config::{ConfigError, ServiceConfig};
pub use error::{ApiError, ErrorBody};
pub use jobs::{JobHandle, JobKind, JobProgress, JobRegistry, JobState};

use error::parse_body;

struct Inner {
    config: ServiceConfig,
    store: TaskStore,
    session: Session,
    jobs: JobRegistry,
    pool: Arc<Semaphore>,
    task_slots: Mutex<HashMap<String, Arc<Semaphore>>>,
    clock: Clock,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, grain_attr_core::task_store::StoreError> {
        Self::with_session(config, Session::new())
    }

    pub fn with_session(
        config: ServiceConfig,
        session: Session,
    ) -> Result<Self, grain_attr_core::task_store::StoreError> {
        let store = TaskStore::open(&config.storage_root)?;
        Ok(Self(Arc::new(Inner {
            pool: Arc::new(Semaphore::new(config.worker_pool_size)),
            config,
            store,
            session,
            jobs: JobRegistry::new(),
            task_slots: Mutex::new(HashMap::new()),
            clock: Clock::from_env(),
        })))
    }

    pub fn store(&self) -> &TaskStore {
        &self.0.store
    }

    pub fn jobs(&self) -> &JobRegistry {
        &self.0.jobs
    }

    fn task_slot(&self, task_id: &str) -> Arc<Semaphore> {
        let mut slots = self.0.task_slots.lock().unwrap();
        slots
            .entry(task_id.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(self.0.config.max_jobs_per_task)))
            .clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/tasks", post(create_task))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/explanations", get(list_explanations))
        .route("/tasks/{id}/segment/preset", post(segment_preset))
        .route("/tasks/{id}/segment/edit", post(segment_edit))
        .route("/tasks/{id}/explain", post(start_explain))
        .route("/jobs/{id}", get(get_job))
        .route("/explanations/{id}", get(get_explanation))
        .route("/explanations/{id}/fidelity", post(start_fidelity))
        .with_state(state)
}

/// Serves the API on `listener` until ctrl-c.
pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::new(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve_on(listener, state).await
}

fn document<T: serde::Serialize>(kind: DocumentKind, doc: &T) -> Json<Value> {
    Json(serde_json::from_str(&to_document(kind, doc)).expect("documents are JSON"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateTask {
    template: String,
    input: String,
    evaluator: EvaluatorSpec,
    #[serde(default)]
    model: Option<ModelSpec>,
}

async fn create_task(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateTask = parse_body(&body)?;
    let model = req
        .model
        .or_else(|| state.0.config.default_model.clone())
        .ok_or_else(|| ApiError::bad_request("model", "no model given and no default configured"))?;
    let task = Task {
        id: format!("task-{}", uuid::Uuid::new_v4().simple()),
        template: req.template,
        input: req.input,
        evaluator: req.evaluator,
        model,
        created_at: state.0.clock.now(),
    };
    let id = state.store().save_task(&task)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn get_task(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(document(DocumentKind::Task, &state.store().load_task(&id)?))
}

async fn list_explanations(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    state.store().load_task(&id)?;
    let list = state.store().list(&id)?;
    Ok(Json(json!({ "task_id": id, "explanations": list })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetRequest {
    level: PresetLevel,
}

async fn segment_preset(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Segmentation>, ApiError> {
    let task = state.store().load_task(&id)?;
    let req: PresetRequest = parse_body(&body)?;
    let tokens = task.tokens().map_err(|e| ApiError::bad_request("input", e))?;
    Ok(Json(preset_segmentation(&tokens, req.level)))
}

#[derive(Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case", deny_unknown_fields)]
enum EditOp {
    Isolate { start: usize, end: usize },
    Merge { group_ids: Vec<GroupId> },
    Relabel { group_id: GroupId, label: Option<String> },
}

#[derive(Deserialize)]
struct EditRequest {
    segmentation: Segmentation,
    #[serde(flatten)]
    edit: EditOp,
}

async fn segment_edit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Segmentation>, ApiError> {
    let task = state.store().load_task(&id)?;
    let req: EditRequest = parse_body(&body)?;
    let tokens = task.tokens().map_err(|e| ApiError::bad_request("input", e))?;
    req.segmentation.check_input(&tokens)?;
    let seg = match req.edit {
        EditOp::Isolate { start, end } => req.segmentation.isolate_span(start..end)?,
        EditOp::Merge { group_ids } => req.segmentation.merge_groups(&group_ids)?,
        EditOp::Relabel { group_id, label } => req.segmentation.relabel(group_id, label)?,
    };
    Ok(Json(seg))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplainRequest {
    segmentation: Segmentation,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    max_samples: Option<usize>,
}

fn accepted(handle: JobHandle) -> Response {
    (StatusCode::ACCEPTED, Json(handle)).into_response()
}

/// Rejects up front what would otherwise fail inside the job.
fn precheck(task: &Task, groups: usize, max_samples: Option<usize>) -> Result<(), ApiError> {
    let model = task.model.with_evaluator_votes(task.evaluator.operator.is_logical());
    effective_sample_cap(groups, &model)?;
    if let Some(limit) = max_samples {
        if limit < groups + 2 {
            return Err(ApiError::bad_request(
                "max_samples",
                format!("must be at least {} for {groups} groups", groups + 2),
            ));
        }
    }
    Ok(())
}

async fn start_explain(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let task = state.store().load_task(&id)?;
    let req: ExplainRequest = parse_body(&body)?;
    let tokens = task.tokens().map_err(|e| ApiError::bad_request("input", e))?;
    req.segmentation.check_input(&tokens)?;
    precheck(&task, req.segmentation.len(), req.max_samples)?;
    state.0.session.scorer(&task)?;

    let (handle, progress) = state.jobs().create(JobKind::Explain, &task.id);
    let job_id = handle.job_id.clone();
    let worker = state.clone();
    tokio::spawn(async move {
        let slot = worker.task_slot(&task.id);
        let _task_permit = slot.acquire_owned().await;
        let _pool_permit = worker.0.pool.clone().acquire_owned().await;
        worker.jobs().start(&job_id);
        match run_explain(&worker, task, req, progress).await {
            Ok(result_ref) => worker.jobs().finish(&job_id, result_ref),
            Err((code, message)) => worker.jobs().fail(&job_id, code, message),
        }
    });
    Ok(accepted(handle))
}

type JobFailure = (&'static str, String);

fn options(state: &AppState, seed: u64, max_samples: Option<usize>, progress: Arc<Progress>) -> ExplainOptions {
    ExplainOptions {
        seed,
        max_samples,
        concurrency: state.0.config.explain_concurrency,
        clock: state.0.clock,
        progress: Some(progress),
    }
}

fn storage_failure(e: impl ToString) -> JobFailure {
    ("storage", e.to_string())
}

async fn run_explain(
    state: &AppState,
    task: Task,
    req: ExplainRequest,
    progress: Arc<Progress>,
) -> Result<String, JobFailure> {
    let scorer = state.0.session.scorer(&task).map_err(|e| (e.code(), e.to_string()))?;
    let opts = options(state, req.seed, req.max_samples, progress);
    let result = explain(&task, &req.segmentation, &scorer, &opts)
        .await
        .map_err(|e| (e.code(), e.to_string()))?;
    let record = ExplanationRecord::new(task, req.segmentation, result).map_err(storage_failure)?;
    state.store().save_explanation(&record).map_err(storage_failure)
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobHandle>, ApiError> {
    state
        .jobs()
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found("job", &id))
}

async fn get_explanation(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    Ok(document(DocumentKind::Explanation, &state.store().load_explanation(&id)?))
}

async fn start_fidelity(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = state.store().load_explanation(&id)?;
    state.0.session.scorer(&record.task)?;
    let (handle, progress) = state.jobs().create(JobKind::Fidelity, &record.task_id);
    let job_id = handle.job_id.clone();
    let worker = state.clone();
    tokio::spawn(async move {
        let slot = worker.task_slot(&record.task_id);
        let _task_permit = slot.acquire_owned().await;
        let _pool_permit = worker.0.pool.clone().acquire_owned().await;
        worker.jobs().start(&job_id);
        match run_fidelity(&worker, record, progress).await {
            Ok(result_ref) => worker.jobs().finish(&job_id, result_ref),
            Err((code, message)) => worker.jobs().fail(&job_id, code, message),
        }
    });
    Ok(accepted(handle))
}

async fn run_fidelity(
    state: &AppState,
    mut record: ExplanationRecord,
    progress: Arc<Progress>,
) -> Result<String, JobFailure> {
    let scorer = state
        .0
        .session
        .scorer(&record.task)
        .map_err(|e| (e.code(), e.to_string()))?;
    let opts = options(state, record.attribution.provenance.seed, None, progress);
    let report = evaluate_fidelity(&record.task, &record.segmentation, &record.attribution, &scorer, &opts)
        .await
        .map_err(|e| (e.code(), e.to_string()))?;
    record.fidelity = Some(report);
    state.store().save_explanation(&record).map_err(storage_failure)
}
