//! HTTP front end of the annotation queue.
//!
//! | method | path                    | body / query                      |
//! |--------|-------------------------|-----------------------------------|
//! | GET    | `/runs/{id}/tasks`      | `?status=pending&offset=0&limit=50` |
//! | GET    | `/tasks/{id}`           |                                   |
//! | POST   | `/tasks/{id}/label`     | `{"label": "...", "note": "..."}` |
//! | GET    | `/runs/{id}/status`     |                                   |
//! | GET    | `/runs/{id}/metrics`    |                                   |
//!
//! When the last pending task of a run is labeled the parked run is resumed
//! on a blocking worker and its result becomes available under `metrics`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use netguard_core::annotation::{AnnotationQueue, AnnotationTask, RunState, RunStatus, TaskPage, TaskStatus};
use netguard_core::classifier::MlpCheckpoint;
use netguard_core::pipeline::{prepare, write_artifacts, PreparedRun};
use netguard_core::Error;
use serde::Deserialize;

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 1000;

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    pub allow_relabel: bool,
}

/// Shared state behind every handler.
pub struct ServiceState {
    queue: AnnotationQueue,
    options: ServiceOptions,
    parked: Mutex<HashMap<String, PreparedRun>>,
    models: Mutex<HashMap<String, MlpCheckpoint<f64>>>,
}

impl ServiceState {
    pub fn new(queue: AnnotationQueue, options: ServiceOptions) -> Arc<Self> {
        Arc::new(Self {
            queue,
            options,
            parked: Mutex::new(HashMap::new()),
            models: Mutex::new(HashMap::new()),
        })
    }

    pub fn queue(&self) -> &AnnotationQueue {
        &self.queue
    }

    /// Enqueues the selected batch of a prepared run and keeps the run in
    /// memory until its labels are complete. Returns the task count.
    pub fn park(&self, run: PreparedRun) -> netguard_core::Result<usize> {
        let selection = run
            .selection()
            .ok_or_else(|| Error::Contract("run has no selection to label".into()))?;
        let n = self
            .queue
            .enqueue_selection(run.run_id(), selection, run.target(), run.initial_model(), Some(&run.config))?;
        self.parked.lock().expect("parked lock").insert(run.run_id().to_string(), run);
        Ok(n)
    }

    /// Finishes a run whose labels are complete. Runs that are not held in
    /// memory (after a restart) are rebuilt from the journaled config.
    pub fn resume_run(&self, run_id: &str) -> netguard_core::Result<()> {
        let outcome = (|| -> netguard_core::Result<serde_json::Value> {
            let labels = self.queue.labels(run_id)?;
            let prepared = match self.parked.lock().expect("parked lock").remove(run_id) {
                Some(p) => p,
                None => {
                    let config = self
                        .queue
                        .config(run_id)?
                        .ok_or_else(|| Error::Contract(format!("run {run_id} has no stored config")))?;
                    prepare(config)?
                }
            };
            let out_dir = prepared.config.output_dir.clone();
            let done = prepared.finish(&labels)?;
            if let Some(dir) = out_dir {
                write_artifacts(&done, &dir)?;
            }
            self.models
                .lock()
                .expect("models lock")
                .insert(run_id.to_string(), done.model.to_checkpoint());
            let mut value = serde_json::to_value(&done.result)?;
            if let Some(obj) = value.as_object_mut() {
                obj.remove("evaluation_indices");
            }
            Ok(value)
        })();
        match outcome {
            Ok(metrics) => self.queue.mark_completed(run_id, metrics),
            Err(e) => {
                log::error!("resuming run {run_id} failed: {e}");
                self.queue.mark_failed(run_id, &e.to_string())?;
                Err(e)
            }
        }
    }

    /// Checkpoint of the retrained model of a run completed by this process.
    pub fn model(&self, run_id: &str) -> Option<MlpCheckpoint<f64>> {
        self.models.lock().expect("models lock").get(run_id).cloned()
    }

    /// Restarts resumption of runs the journal shows as fully labeled but
    /// unfinished.
    pub fn resume_pending(self: &Arc<Self>) {
        for run_id in self.queue.runs_resuming() {
            let state = Arc::clone(self);
            std::thread::spawn(move || {
                let _ = state.resume_run(&run_id);
            });
        }
    }
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Conflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
struct TaskQuery {
    status: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn list_tasks(
    State(state): State<Arc<ServiceState>>,
    Path(run_id): Path<String>,
    Query(q): Query<TaskQuery>,
) -> ApiResult<TaskPage> {
    let status = q.status.as_deref().map(str::parse::<TaskStatus>).transpose()?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    Ok(Json(state.queue.tasks(&run_id, status, q.offset.unwrap_or(0), limit)?))
}

async fn get_task(State(state): State<Arc<ServiceState>>, Path(task_id): Path<String>) -> ApiResult<AnnotationTask> {
    Ok(Json(state.queue.task(&task_id)?))
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    label: String,
    #[serde(default)]
    note: Option<String>,
}

async fn submit_label(
    State(state): State<Arc<ServiceState>>,
    Path(task_id): Path<String>,
    Json(body): Json<LabelBody>,
) -> ApiResult<AnnotationTask> {
    let outcome = state
        .queue
        .submit_label(&task_id, &body.label, body.note, state.options.allow_relabel)?;
    if outcome.run_ready {
        let run_id = outcome.task.run_id.clone();
        let worker = Arc::clone(&state);
        tokio::task::spawn_blocking(move || {
            let _ = worker.resume_run(&run_id);
        });
    }
    Ok(Json(outcome.task))
}

async fn run_status(State(state): State<Arc<ServiceState>>, Path(run_id): Path<String>) -> ApiResult<RunStatus> {
    Ok(Json(state.queue.status(&run_id)?))
}

async fn run_metrics(
    State(state): State<Arc<ServiceState>>,
    Path(run_id): Path<String>,
) -> ApiResult<serde_json::Value> {
    let status = state.queue.status(&run_id)?;
    match (status.state, state.queue.metrics(&run_id)?) {
        (RunState::Completed, Some(m)) => Ok(Json(m)),
        (RunState::Failed(e), _) => Err(ApiError(Error::Conflict(format!("run {run_id} failed: {e}")))),
        _ => Err(ApiError(Error::Conflict(format!("run {run_id} has not completed")))),
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/runs/{id}/tasks", get(list_tasks))
        .route("/runs/{id}/status", get(run_status))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/label", post(submit_label))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
