use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use grain_attr_core::attribution::Progress;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Explain,
    Fidelity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobProgress {
    /// Coalitions scored so far.
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub kind: JobKind,
    pub task_id: String,
    pub state: JobState,
    pub progress: JobProgress,
    /// Explanation id once the job is done.
    pub result_ref: Option<String>,
    pub error: Option<String>,
    pub error_code: Option<String>,
}

struct Entry {
    handle: JobHandle,
    progress: Arc<Progress>,
}

/// In-memory job table. Jobs do not survive a restart.
#[derive(Default)]
pub struct JobRegistry {
    jobs: Mutex<HashMap<String, Entry>>,
}

impl JobRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, kind: JobKind, task_id: &str) -> (JobHandle, Arc<Progress>) {
        let handle = JobHandle {
            job_id: format!("job-{}", uuid::Uuid::new_v4().simple()),
            kind,
            task_id: task_id.to_string(),
            state: JobState::Queued,
            progress: JobProgress { done: 0, total: 0 },
            result_ref: None,
            error: None,
            error_code: None,
        };
        let progress = Arc::new(Progress::new());
        self.jobs.lock().unwrap().insert(
            handle.job_id.clone(),
            Entry {
                handle: handle.clone(),
                progress: progress.clone(),
            },
        );
        (handle, progress)
    }

    pub fn get(&self, id: &str) -> Option<JobHandle> {
        let jobs = self.jobs.lock().unwrap();
        let entry = jobs.get(id)?;
        let mut handle = entry.handle.clone();
        handle.progress = JobProgress {
            done: entry.progress.done(),
            total: entry.progress.total(),
        };
        Some(handle)
    }

    pub fn start(&self, id: &str) {
        self.transition(id, JobState::Running, |_| {});
    }

    pub fn finish(&self, id: &str, result_ref: String) {
        self.transition(id, JobState::Done, |h| h.result_ref = Some(result_ref));
    }

    pub fn fail(&self, id: &str, code: &str, message: String) {
        self.transition(id, JobState::Failed, |h| {
            h.error_code = Some(code.to_string());
            h.error = Some(message);
        });
    }

    /// Moves a job forward; backward or repeated transitions are ignored.
    fn transition(&self, id: &str, to: JobState, update: impl FnOnce(&mut JobHandle)) {
        let mut jobs = self.jobs.lock().unwrap();
        if let Some(entry) = jobs.get_mut(id) {
            let from = entry.handle.state;
            if from.is_terminal() || to <= from {
                tracing::warn!(job = id, ?from, ?to, "ignoring job state transition");
                return;
            }
            entry.handle.state = to;
            update(&mut entry.handle);
        }
    }
}
