//! In-memory job queue. Jobs are lost on restart; every step is idempotent,
//! so a lost job can simply be submitted again.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::pipeline::{run_step, Step};
use crate::store::ProjectStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub project_id: String,
    pub state: JobState,
    pub steps: Vec<Step>,
    /// Step currently running, or the last one attempted.
    pub step: Option<Step>,
    pub results: Vec<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

#[derive(Default)]
pub struct JobRegistry {
    next: AtomicU64,
    jobs: Mutex<BTreeMap<String, Job>>,
}

impl JobRegistry {
    pub fn get(&self, job_id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().get(job_id).cloned()
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(job_id) {
            f(job);
        }
    }

    pub fn submit(&self, project_id: &str, steps: Vec<Step>) -> Job {
        let n = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        let job = Job {
            job_id: format!("job-{n}"),
            project_id: project_id.to_string(),
            state: JobState::Queued,
            steps,
            step: None,
            results: Vec::new(),
            error: None,
        };
        self.jobs.lock().unwrap().insert(job.job_id.clone(), job.clone());
        job
    }

    /// Runs a submitted job to completion under the project's write lock.
    /// Blocks the calling thread.
    pub fn execute(&self, store: &ProjectStore, job_id: &str) {
        let Some(job) = self.get(job_id) else { return };
        let lock = store.lock(&job.project_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.update(job_id, |j| j.state = JobState::Running);
        for step in job.steps {
            self.update(job_id, |j| j.step = Some(step));
            match run_step(store, &job.project_id, step) {
                Ok(v) => self.update(job_id, |j| j.results.push(v)),
                Err(e) => {
                    tracing::warn!(job = job_id, step = step.as_str(), error = %e, "job failed");
                    self.update(job_id, |j| {
                        j.state = JobState::Failed;
                        j.error = Some(e.body());
                    });
                    return;
                }
            }
        }
        self.update(job_id, |j| j.state = JobState::Done);
    }
}

pub type SharedJobs = Arc<JobRegistry>;
