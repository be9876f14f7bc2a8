//! Versioned JSON documents on disk, one file per document.
//!
//! Every document is an object carrying `schema_version` and `kind` next to
//! its own fields, written with keys in sorted order so that files diff
//! cleanly. Writes go to a temporary file that is renamed into place.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attribution::AttributionResult;
use crate::evaluator::EvaluatorSpec;
use crate::fidelity::FidelityReport;
use crate::model_client::ModelSpec;
use crate::perturbation::check_template;
use crate::segmentation::{tokenize_words, Segmentation, TokenizedText};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: DocumentKind, id: String },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("corrupt document: {0}")]
    CorruptDocument(String),
    #[error("expected a {expected} document, found `{found}`")]
    WrongKind { expected: DocumentKind, found: String },
    #[error("invalid id `{0}`")]
    InvalidId(String),
    #[error(transparent)]
    InvalidTask(#[from] TaskError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// A task that fails validation, with the offending field.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct TaskError {
    pub field: String,
    pub message: String,
}

impl TaskError {
    fn new(field: &str, message: impl ToString) -> Self {
        Self {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    Task,
    Explanation,
    FidelityReport,
}

impl DocumentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocumentKind::Task => "task",
            DocumentKind::Explanation => "explanation",
            DocumentKind::FidelityReport => "fidelity_report",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            DocumentKind::Task => "tasks",
            DocumentKind::Explanation => "explanations",
            DocumentKind::FidelityReport => "reports",
        }
    }
}

impl std::fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prompt template, the input to explain, and how to score responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub template: String,
    pub input: String,
    pub evaluator: EvaluatorSpec,
    pub model: ModelSpec,
    pub created_at: DateTime<Utc>,
}

impl Task {
    pub fn validate(&self) -> Result<(), TaskError> {
        validate_id(&self.id).map_err(|_| TaskError::new("id", "must be 1-128 characters of [A-Za-z0-9._-]"))?;
        check_template(&self.template).map_err(|e| TaskError::new("template", e))?;
        if self.input.trim().is_empty() {
            return Err(TaskError::new("input", "must not be empty"));
        }
        self.evaluator
            .validate()
            .map_err(|e| TaskError::new("evaluator", e))?;
        self.model.validate().map_err(|e| TaskError::new("model", e))?;
        Ok(())
    }

    pub fn tokens(&self) -> Result<TokenizedText, TaskError> {
        tokenize_words(&self.input).map_err(|e| TaskError::new("input", e))
    }
}

/// An attribution over one segmentation of a task, optionally with its
/// fidelity report. Carries a snapshot of the task so it can be re-scored on
/// its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub id: String,
    pub task_id: String,
    pub task: Task,
    pub tokens: TokenizedText,
    pub segmentation: Segmentation,
    pub attribution: AttributionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<FidelityReport>,
}

impl ExplanationRecord {
    pub fn new(task: Task, segmentation: Segmentation, attribution: AttributionResult) -> Result<Self, TaskError> {
        let tokens = task.tokens()?;
        segmentation
            .check_input(&tokens)
            .map_err(|e| TaskError::new("segmentation", e))?;
        let id = Self::derive_id(&task, &segmentation, &attribution);
        Ok(Self {
            id,
            task_id: task.id.clone(),
            task,
            tokens,
            segmentation,
            attribution,
            fidelity: None,
        })
    }

    /// Content-derived id: same task, groups, seed and cap give the same id.
    pub fn derive_id(task: &Task, segmentation: &Segmentation, attribution: &AttributionResult) -> String {
        let mut hasher = Sha256::new();
        hasher.update(task.id.as_bytes());
        hasher.update([0]);
        hasher.update(serde_json::to_vec(segmentation).expect("segmentation serializes"));
        hasher.update(attribution.provenance.seed.to_le_bytes());
        hasher.update((attribution.provenance.sample_cap as u64).to_le_bytes());
        let digest = hasher.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("exp-{hex}")
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        self.task.validate()?;
        if self.task_id != self.task.id {
            return Err(TaskError::new("task_id", "does not match the embedded task"));
        }
        self.segmentation
            .check_input(&self.tokens)
            .map_err(|e| TaskError::new("segmentation", e))?;
        if self.tokens.reconstruct() != self.task.input {
            return Err(TaskError::new("tokens", "do not reconstruct the task input"));
        }
        if !self.attribution.matches(&self.segmentation) {
            return Err(TaskError::new("attribution", "groups differ from the segmentation"));
        }
        Ok(())
    }

    pub fn summary(&self) -> ExplanationSummary {
        ExplanationSummary {
            id: self.id.clone(),
            task_id: self.task_id.clone(),
            groups: self.segmentation.len(),
            exact: self.attribution.exact,
            fidelity_score: self.fidelity.as_ref().map(|f| f.score),
            finished_at: self.attribution.provenance.finished_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    pub id: String,
    pub task_id: String,
    pub groups: usize,
    pub exact: bool,
    pub fidelity_score: Option<f64>,
    pub finished_at: DateTime<Utc>,
}

fn validate_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// Recursively sorts object keys.
pub fn canonicalize(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, canonicalize(v)))
                    .collect::<Map<String, Value>>(),
            )
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// Serializes `doc` as a stamped, canonically ordered JSON document.
pub fn to_document<T: Serialize>(kind: DocumentKind, doc: &T) -> String {
    let mut value = serde_json::to_value(doc).expect("documents serialize to JSON");
    if let Value::Object(map) = &mut value {
        map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
        map.insert("kind".into(), Value::from(kind.as_str()));
    }
    let mut text = serde_json::to_string_pretty(&canonicalize(value)).expect("JSON value prints");
    text.push('\n');
    text
}

/// Parses a stamped document, checking its version and kind.
pub fn from_document<T: DeserializeOwned>(kind: DocumentKind, text: &str) -> Result<T, StoreError> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
    let map = value
        .as_object_mut()
        .ok_or_else(|| StoreError::CorruptDocument("document is not a JSON object".into()))?;
    let version = map
        .remove("schema_version")
        .ok_or_else(|| StoreError::CorruptDocument("missing schema_version".into()))?;
    let version = version
        .as_u64()
        .ok_or_else(|| StoreError::CorruptDocument("schema_version is not an integer".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(StoreError::SchemaVersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    match map.remove("kind") {
        Some(Value::String(k)) if k == kind.as_str() => {}
        Some(other) => {
            return Err(StoreError::WrongKind {
                expected: kind,
                found: other.as_str().unwrap_or("?").to_string(),
            })
        }
        None => return Err(StoreError::CorruptDocument("missing kind".into())),
    }
    serde_json::from_value(value).map_err(|e| StoreError::CorruptDocument(e.to_string()))
}

pub fn read_task_file(path: &Path) -> Result<Task, StoreError> {
    let task: Task = from_document(DocumentKind::Task, &fs::read_to_string(path)?)?;
    task.validate()?;
    Ok(task)
}

pub fn read_explanation_file(path: &Path) -> Result<ExplanationRecord, StoreError> {
    let record: ExplanationRecord = from_document(DocumentKind::Explanation, &fs::read_to_string(path)?)?;
    record.validate()?;
    Ok(record)
}

/// Writes `contents` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), StoreError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
    Ok(())
}

/// Directory-backed document store.
#[derive(Debug, Clone)]
pub struct TaskStore {
    root: PathBuf,
}

impl TaskStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for kind in [DocumentKind::Task, DocumentKind::Explanation] {
            fs::create_dir_all(root.join(kind.dir()))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: DocumentKind, id: &str) -> Result<PathBuf, StoreError> {
        validate_id(id)?;
        Ok(self.root.join(kind.dir()).join(format!("{id}.json")))
    }

    fn save<T: Serialize>(&self, kind: DocumentKind, id: &str, doc: &T) -> Result<(), StoreError> {
        write_atomic(&self.path(kind, id)?, &to_document(kind, doc))
    }

    fn load<T: DeserializeOwned>(&self, kind: DocumentKind, id: &str) -> Result<T, StoreError> {
        let path = self.path(kind, id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound {
                    kind,
                    id: id.to_string(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        from_document(kind, &text)
    }

    pub fn save_task(&self, task: &Task) -> Result<String, StoreError> {
        task.validate()?;
        self.save(DocumentKind::Task, &task.id, task)?;
        Ok(task.id.clone())
    }

    pub fn load_task(&self, id: &str) -> Result<Task, StoreError> {
        self.load(DocumentKind::Task, id)
    }

    pub fn save_explanation(&self, record: &ExplanationRecord) -> Result<String, StoreError> {
        record.validate()?;
        self.save(DocumentKind::Explanation, &record.id, record)?;
        Ok(record.id.clone())
    }

    pub fn load_explanation(&self, id: &str) -> Result<ExplanationRecord, StoreError> {
        self.load(DocumentKind::Explanation, id)
    }

    /// Summaries of every explanation of `task_id`, sorted by id.
    pub fn list(&self, task_id: &str) -> Result<Vec<ExplanationSummary>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join(DocumentKind::Explanation.dir()))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let record: ExplanationRecord =
                from_document(DocumentKind::Explanation, &fs::read_to_string(&path)?)?;
            if record.task_id == task_id {
                out.push(record.summary());
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}
