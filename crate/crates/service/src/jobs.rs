//! Background jobs: numerical work on a bounded rayon pool, polled by id.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use serde_json::Value;

use crate::store::{Session, SessionHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Canceled,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed | Self::Canceled)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: String,
    pub kind: &'static str,
    pub session: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type JobHandle = Arc<Mutex<Job>>;

pub struct Jobs {
    pool: rayon::ThreadPool,
    jobs: Mutex<HashMap<String, JobHandle>>,
}

/// Outcome of [`Jobs::cancel`].
pub enum Cancel {
    Canceled,
    AlreadyFinished(JobStatus),
    Unknown,
}

impl Jobs {
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("shapemorph-worker-{i}"))
            .build()
            .expect("worker pool");
        Self {
            pool,
            jobs: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        let handle = self.jobs.lock().unwrap().get(id).cloned()?;
        let job = handle.lock().unwrap().clone();
        Some(job)
    }

    pub fn cancel(&self, id: &str) -> Cancel {
        let Some(handle) = self.jobs.lock().unwrap().get(id).cloned() else {
            return Cancel::Unknown;
        };
        let mut job = handle.lock().unwrap();
        if job.status.is_finished() {
            return Cancel::AlreadyFinished(job.status);
        }
        job.status = JobStatus::Canceled;
        Cancel::Canceled
    }

    /// Runs `compute` on the worker pool, then `commit` under the session
    /// lock. A job canceled before `commit` leaves the session untouched and
    /// `discard` receives the computed value instead.
    pub fn spawn<T, F, C, D>(
        self: &Arc<Self>,
        kind: &'static str,
        session_id: String,
        session: SessionHandle,
        compute: F,
        commit: C,
        discard: D,
    ) -> String
    where
        T: Send + 'static,
        F: FnOnce() -> shapemorph::Result<T> + Send + 'static,
        C: FnOnce(&mut Session, T) -> shapemorph::Result<Value> + Send + 'static,
        D: FnOnce(T) + Send + 'static,
    {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let handle = Arc::new(Mutex::new(Job {
            id: id.clone(),
            kind,
            session: session_id,
            status: JobStatus::Queued,
            result: None,
            error: None,
        }));
        self.jobs.lock().unwrap().insert(id.clone(), handle.clone());
        let jobs = self.clone();
        tokio::spawn(async move {
            let (tx, rx) = tokio::sync::oneshot::channel();
            let started = handle.clone();
            jobs.pool.spawn(move || {
                {
                    let mut job = started.lock().unwrap();
                    if job.status == JobStatus::Canceled {
                        return;
                    }
                    job.status = JobStatus::Running;
                }
                let _ = tx.send(compute());
            });
            let Ok(outcome) = rx.await else {
                return;
            };
            let mut guard = session.lock().await;
            let mut job = handle.lock().unwrap();
            match outcome {
                Ok(value) if job.status == JobStatus::Canceled => discard(value),
                Ok(value) => match commit(&mut guard, value) {
                    Ok(result) => {
                        job.status = JobStatus::Succeeded;
                        job.result = Some(result);
                    }
                    Err(e) => {
                        job.status = JobStatus::Failed;
                        job.error = Some(e.to_string());
                    }
                },
                Err(_) if job.status == JobStatus::Canceled => {}
                Err(e) => {
                    job.status = JobStatus::Failed;
                    job.error = Some(e.to_string());
                }
            }
        });
        id
    }
}
