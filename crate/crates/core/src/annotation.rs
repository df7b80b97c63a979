//! Labeling queue for runs parked on a human oracle.
//!
//! One task per selected sample. State changes are serialized behind a
//! single lock, so a task moves from pending to labeled exactly once and a
//! run reports itself ready to resume exactly once. Every change is appended
//! to a per-run JSON-lines journal; [`AnnotationQueue::replay`] rebuilds the
//! queue from those files.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::dataset::Dataset;
use crate::error::{contract, Error, Result};
use crate::pipeline::RunConfig;
use crate::selection::SelectionReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Labeled,
}

impl std::str::FromStr for TaskStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(TaskStatus::Pending),
            "labeled" => Ok(TaskStatus::Labeled),
            other => Err(Error::Validation(format!("unknown task status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    State(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub value: FeatureValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub run_id: String,
    /// Row in the run's unlabeled target set.
    pub sample_index: usize,
    /// Position in the selected batch.
    pub position: usize,
    /// Feature values in normalized units; categorical values by state name.
    pub features: Vec<FeatureEntry>,
    pub score: Option<f64>,
    pub predicted_label: String,
    /// Source-model probabilities in class-vocabulary order.
    pub probabilities: Vec<f64>,
    pub status: TaskStatus,
    pub label: Option<String>,
    pub note: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub labeled_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "detail")]
pub enum RunState {
    AwaitingLabels,
    Resuming,
    Completed,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    #[serde(flatten)]
    pub state: RunState,
    pub total: usize,
    pub pending: usize,
    pub labeled: usize,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPage {
    pub total: usize,
    pub offset: usize,
    pub tasks: Vec<AnnotationTask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmitOutcome {
    pub task: AnnotationTask,
    /// Set on the one submission that labeled the run's last pending task.
    pub run_ready: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Enqueued {
        run_id: String,
        classes: Vec<String>,
        config: Option<Box<RunConfig>>,
        tasks: Vec<AnnotationTask>,
    },
    Labeled {
        task_id: String,
        label: String,
        note: Option<String>,
        at: u64,
    },
    Completed {
        metrics: serde_json::Value,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug)]
struct RunEntry {
    classes: Vec<String>,
    config: Option<RunConfig>,
    task_ids: Vec<String>,
    state: RunState,
    metrics: Option<serde_json::Value>,
}

#[derive(Debug, Default)]
struct Inner {
    runs: HashMap<String, RunEntry>,
    tasks: HashMap<String, AnnotationTask>,
}

impl Inner {
    fn counts(&self, run: &RunEntry) -> (usize, usize) {
        let pending = run
            .task_ids
            .iter()
            .filter(|id| self.tasks[*id].status == TaskStatus::Pending)
            .count();
        (pending, run.task_ids.len() - pending)
    }

    fn apply(&mut self, event: JournalEvent, run_id: &str) -> Result<()> {
        match event {
            JournalEvent::Enqueued {
                run_id,
                classes,
                config,
                tasks,
            } => {
                let task_ids = tasks.iter().map(|t| t.id.clone()).collect();
                for t in tasks {
                    self.tasks.insert(t.id.clone(), t);
                }
                self.runs.insert(
                    run_id,
                    RunEntry {
                        classes,
                        config: config.map(|c| *c),
                        task_ids,
                        state: RunState::AwaitingLabels,
                        metrics: None,
                    },
                );
            }
            JournalEvent::Labeled { task_id, label, note, at } => {
                let t = self
                    .tasks
                    .get_mut(&task_id)
                    .ok_or_else(|| Error::NotFound(format!("journal names unknown task {task_id}")))?;
                t.status = TaskStatus::Labeled;
                t.label = Some(label);
                t.note = note;
                t.labeled_at = Some(at);
                let run = self.runs.get(run_id).expect("task belongs to a run");
                if self.counts(run).0 == 0 {
                    self.runs.get_mut(run_id).expect("present").state = RunState::Resuming;
                }
            }
            JournalEvent::Completed { metrics } => {
                let run = self.run_mut(run_id)?;
                run.state = RunState::Completed;
                run.metrics = Some(metrics);
            }
            JournalEvent::Failed { error } => {
                self.run_mut(run_id)?.state = RunState::Failed(error);
            }
        }
        Ok(())
    }

    fn run_mut(&mut self, run_id: &str) -> Result<&mut RunEntry> {
        self.runs
            .get_mut(run_id)
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Default)]
pub struct AnnotationQueue {
    inner: Mutex<Inner>,
    journal_dir: Option<PathBuf>,
}

impl AnnotationQueue {
    /// Without a journal directory the queue lives in memory only.
    pub fn new(journal_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(dir) = &journal_dir {
            fs::create_dir_all(dir)?;
        }
        Ok(Self {
            inner: Mutex::new(Inner::default()),
            journal_dir,
        })
    }

    /// Rebuilds the queue from every `*.jsonl` journal in `dir`.
    pub fn replay(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let queue = Self::new(Some(dir.clone()))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        {
            let mut inner = queue.inner.lock().expect("queue lock");
            for path in files {
                let run_id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| contract("journal file name is not UTF-8"))?
                    .to_string();
                for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<JournalEvent>(&line) {
                        Ok(ev) => inner.apply(ev, &run_id)?,
                        Err(e) => {
                            // a crash mid-append leaves a torn final line
                            log::warn!("{}: skipping unreadable line {}: {e}", path.display(), n + 1);
                        }
                    }
                }
            }
        }
        Ok(queue)
    }

    fn journal(&self, run_id: &str, event: &JournalEvent) -> Result<()> {
        let Some(dir) = &self.journal_dir else {
            return Ok(());
        };
        let path = journal_path(dir, run_id);
        let torn = match File::open(&path) {
            Ok(mut f) if f.metadata()?.len() > 0 => {
                let mut last = [0u8; 1];
                f.seek(SeekFrom::End(-1))?;
                f.read_exact(&mut last)?;
                last[0] != b'\n'
            }
            _ => false,
        };
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut line = if torn { "\n".to_string() } else { String::new() };
        line += &serde_json::to_string(event)?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// Creates one pending task per selected index of `target` (the
    /// normalized unlabeled set), annotated with the source model's
    /// prediction. Enqueuing the same run again adds nothing.
    pub fn enqueue_selection<M: Classifier<f64> + ?Sized>(
        &self,
        run_id: &str,
        selection: &SelectionReport,
        target: &Dataset,
        model: &M,
        config: Option<&RunConfig>,
    ) -> Result<usize> {
        let mut inner = self.inner.lock().expect("queue lock");
        if let Some(run) = inner.runs.get(run_id) {
            return Ok(run.task_ids.len());
        }
        let schema = target.schema();
        let batch = target.subset(&selection.selected)?;
        let probs = model.predict_proba(batch.encode::<f64>().view())?;
        let created_at = now_ms();
        let mut tasks = Vec::with_capacity(selection.selected.len());
        for (pos, (&idx, record)) in selection.selected.iter().zip(batch.records()).enumerate() {
            let features = schema
                .features
                .iter()
                .zip(&record.values)
                .map(|(f, &v)| FeatureEntry {
                    name: f.name.clone(),
                    value: match f.vocabulary() {
                        Some(vocab) => FeatureValue::State(vocab[v as usize].clone()),
                        None => FeatureValue::Number(v),
                    },
                })
                .collect();
            let p: Vec<f64> = probs.row(pos).to_vec();
            let best = crate::classifier::argmax_rows(&probs.slice(ndarray::s![pos..=pos, ..]).to_owned())[0];
            tasks.push(AnnotationTask {
                id: format!("{run_id}-t{pos}"),
                run_id: run_id.to_string(),
                sample_index: idx,
                position: pos,
                features,
                score: selection.scores.as_ref().map(|s| s[idx]),
                predicted_label: schema.classes[best].clone(),
                probabilities: p,
                status: TaskStatus::Pending,
                label: None,
                note: None,
                created_at,
                labeled_at: None,
            });
        }
        let n = tasks.len();
        let event = JournalEvent::Enqueued {
            run_id: run_id.to_string(),
            classes: schema.classes.clone(),
            config: config.cloned().map(Box::new),
            tasks,
        };
        self.journal(run_id, &event)?;
        inner.apply(event, run_id)?;
        Ok(n)
    }

    /// Labels a task. Fails with `NotFound` for an unknown task, `Validation`
    /// for a label outside the run's vocabulary and `Conflict` when the task
    /// is already labeled and `allow_relabel` is off.
    pub fn submit_label(&self, task_id: &str, label: &str, note: Option<String>, allow_relabel: bool) -> Result<SubmitOutcome> {
        let mut inner = self.inner.lock().expect("queue lock");
        let task = inner
            .tasks
            .get(task_id)
            .ok_or_else(|| Error::NotFound(format!("task {task_id}")))?;
        let run_id = task.run_id.clone();
        let run = &inner.runs[&run_id];
        if !run.classes.iter().any(|c| c == label) {
            return Err(Error::Validation(format!("label {label:?} is not a class of run {run_id}")));
        }
        if task.status == TaskStatus::Labeled {
            if !allow_relabel {
                return Err(Error::Conflict(format!("task {task_id} is already labeled")));
            }
            if run.state != RunState::AwaitingLabels {
                return Err(Error::Conflict(format!("run {run_id} has already resumed")));
            }
        }
        let event = JournalEvent::Labeled {
            task_id: task_id.to_string(),
            label: label.to_string(),
            note,
            at: now_ms(),
        };
        self.journal(&run_id, &event)?;
        let was_waiting = run.state == RunState::AwaitingLabels;
        inner.apply(event, &run_id)?;
        let now_resuming = inner.runs[&run_id].state == RunState::Resuming;
        Ok(SubmitOutcome {
            task: inner.tasks[task_id].clone(),
            run_ready: was_waiting && now_resuming,
        })
    }

    pub fn task(&self, task_id: &str) -> Result<AnnotationTask> {
        let inner = self.inner.lock().expect("queue lock");
        inner
            .tasks
            .get(task_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("task {task_id}")))
    }

    /// Tasks of a run, highest score first (selection order on ties).
    pub fn tasks(&self, run_id: &str, status: Option<TaskStatus>, offset: usize, limit: usize) -> Result<TaskPage> {
        let inner = self.inner.lock().expect("queue lock");
        let run = inner
            .runs
            .get(run_id)
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))?;
        let mut all: Vec<&AnnotationTask> = run
            .task_ids
            .iter()
            .map(|id| &inner.tasks[id])
            .filter(|t| status.is_none_or(|s| t.status == s))
            .collect();
        all.sort_by(|a, b| {
            let (sa, sb) = (a.score.unwrap_or(f64::NEG_INFINITY), b.score.unwrap_or(f64::NEG_INFINITY));
            sb.total_cmp(&sa).then(a.position.cmp(&b.position))
        });
        Ok(TaskPage {
            total: all.len(),
            offset,
            tasks: all.into_iter().skip(offset).take(limit).cloned().collect(),
        })
    }

    pub fn status(&self, run_id: &str) -> Result<RunStatus> {
        let inner = self.inner.lock().expect("queue lock");
        let run = inner
            .runs
            .get(run_id)
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))?;
        let (pending, labeled) = inner.counts(run);
        Ok(RunStatus {
            run_id: run_id.to_string(),
            state: run.state.clone(),
            total: run.task_ids.len(),
            pending,
            labeled,
            classes: run.classes.clone(),
        })
    }

    /// Submitted labels as class indices in selection order.
    pub fn labels(&self, run_id: &str) -> Result<Vec<usize>> {
        let inner = self.inner.lock().expect("queue lock");
        let run = inner
            .runs
            .get(run_id)
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))?;
        run.task_ids
            .iter()
            .map(|id| {
                let t = &inner.tasks[id];
                let label = t
                    .label
                    .as_ref()
                    .ok_or_else(|| Error::Conflict(format!("task {id} is still pending")))?;
                Ok(run.classes.iter().position(|c| c == label).expect("validated on submit"))
            })
            .collect()
    }

    pub fn config(&self, run_id: &str) -> Result<Option<RunConfig>> {
        let inner = self.inner.lock().expect("queue lock");
        Ok(inner
            .runs
            .get(run_id)
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))?
            .config
            .clone())
    }

    pub fn metrics(&self, run_id: &str) -> Result<Option<serde_json::Value>> {
        let inner = self.inner.lock().expect("queue lock");
        Ok(inner
            .runs
            .get(run_id)
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))?
            .metrics
            .clone())
    }

    /// Runs whose labels are complete but which have not finished; after a
    /// replay these need their resume restarted.
    pub fn runs_resuming(&self) -> Vec<String> {
        let inner = self.inner.lock().expect("queue lock");
        let mut ids: Vec<String> = inner
            .runs
            .iter()
            .filter(|(_, r)| r.state == RunState::Resuming)
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn mark_completed(&self, run_id: &str, metrics: serde_json::Value) -> Result<()> {
        let mut inner = self.inner.lock().expect("queue lock");
        inner.run_mut(run_id)?;
        let event = JournalEvent::Completed { metrics };
        self.journal(run_id, &event)?;
        inner.apply(event, run_id)
    }

    pub fn mark_failed(&self, run_id: &str, error: &str) -> Result<()> {
        let mut inner = self.inner.lock().expect("queue lock");
        inner.run_mut(run_id)?;
        let event = JournalEvent::Failed { error: error.to_string() };
        self.journal(run_id, &event)?;
        inner.apply(event, run_id)
    }
}

pub fn journal_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.jsonl"))
}
