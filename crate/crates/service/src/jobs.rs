//! Analysis jobs and their persistent store.
//!
//! Every job transition is appended to `journal.jsonl` before it becomes
//! visible. Stage outputs are written to `jobs/<id>/` before the transition
//! that follows the stage, so a job found in state `crawling` after a
//! restart has its linking output on disk and resumes at crawling.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use xmc_core::clock::{Clock, Timestamp};
use xmc_core::entity::{EntityType, KbId, Language};
use xmc_core::scoring::DocumentReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Linking,
    Crawling,
    Scoring,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Forward moves only; `failed` is reachable from any unfinished state.
    pub fn can_move_to(self, next: JobState) -> bool {
        match next {
            JobState::Failed => !self.is_terminal(),
            _ => !self.is_terminal() && next > self,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Linking => "linking",
            JobState::Crawling => "crawling",
            JobState::Scoring => "scoring",
            JobState::Done => "done",
            JobState::Failed => "failed",
        }
    }
}

impl std::fmt::Display for JobState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Linking,
    Crawling,
    Scoring,
}

impl Stage {
    pub fn state(self) -> JobState {
        match self {
            Stage::Linking => JobState::Linking,
            Stage::Crawling => JobState::Crawling,
            Stage::Scoring => JobState::Scoring,
        }
    }
}

/// Completed fraction of each stage, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageProgress {
    pub linking: f64,
    pub crawling: f64,
    pub scoring: f64,
}

impl StageProgress {
    fn slot(&mut self, stage: Stage) -> &mut f64 {
        match stage {
            Stage::Linking => &mut self.linking,
            Stage::Crawling => &mut self.crawling,
            Stage::Scoring => &mut self.scoring,
        }
    }
}

/// What was submitted. The image itself is stored next to the job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub text: String,
    /// Hex SHA-256 of the image bytes.
    pub image_sha256: Option<String>,
    pub types: BTreeSet<EntityType>,
    pub language: Language,
    /// Single-claimed-entity mode: a label or knowledge-base id.
    pub entity: Option<String>,
}

impl AnalysisRequest {
    /// Requests with equal keys are answered by the same job.
    pub fn dedup_key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisJob {
    pub job_id: String,
    pub state: JobState,
    pub submitted_at: Timestamp,
    pub updated_at: Timestamp,
    pub progress: StageProgress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<DocumentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
}

/// One line of the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalRecord {
    Submitted { job_id: String, at: Timestamp, request: AnalysisRequest },
    Transition {
        job_id: String,
        at: Timestamp,
        state: JobState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage: Option<Stage>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    /// A worker picked the job up again after a restart.
    Resumed { job_id: String, at: Timestamp, state: JobState },
    /// Entities linked by the job, for reference lookups.
    Linked { job_id: String, entities: Vec<KbId> },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("job {job_id}: illegal transition {from} -> {to}")]
    IllegalTransition { job_id: String, from: JobState, to: JobState },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt job artifact {path}: {message}")]
    Corrupt { path: String, message: String },
}

struct Inner {
    jobs: HashMap<String, AnalysisJob>,
    requests: HashMap<String, AnalysisRequest>,
    finished_at: HashMap<String, Timestamp>,
    dedup: HashMap<String, String>,
    entity_jobs: HashMap<KbId, String>,
    journal: File,
}

pub struct JobStore {
    root: PathBuf,
    clock: Arc<dyn Clock>,
    ttl: Duration,
    inner: Mutex<Inner>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io { path: path.display().to_string(), source: e }
}

const IMAGE: &str = "image.bin";
const REPORT: &str = "report.json";

impl JobStore {
    /// Opens (or creates) the store under `root` and replays its journal.
    /// Returns the store and the unfinished jobs in submission order.
    pub fn open(root: &Path, clock: Arc<dyn Clock>, ttl: Duration) -> Result<(Self, Vec<String>), StoreError> {
        std::fs::create_dir_all(root.join("jobs")).map_err(io_err(root))?;
        let journal_path = root.join("journal.jsonl");
        let mut jobs: HashMap<String, AnalysisJob> = HashMap::new();
        let mut requests = HashMap::new();
        let mut finished_at = HashMap::new();
        let mut dedup = HashMap::new();
        let mut entity_jobs = HashMap::new();
        let mut order = Vec::new();
        if journal_path.exists() {
            let file = File::open(&journal_path).map_err(io_err(&journal_path))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(&journal_path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JournalRecord = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    Err(e) => {
                        // A torn final write after a crash.
                        tracing::warn!(line = n + 1, error = %e, "skipping unreadable journal line");
                        continue;
                    }
                };
                match record {
                    JournalRecord::Submitted { job_id, at, request } => {
                        dedup.insert(request.dedup_key(), job_id.clone());
                        requests.insert(job_id.clone(), request);
                        order.push(job_id.clone());
                        jobs.insert(job_id.clone(), new_job(job_id, at));
                    }
                    JournalRecord::Transition { job_id, at, state, stage, error } => {
                        if let Some(job) = jobs.get_mut(&job_id) {
                            job.state = state;
                            job.updated_at = at;
                            job.error = error;
                            job.failed_stage = stage;
                            if state.is_terminal() {
                                finished_at.insert(job_id, at);
                            }
                        }
                    }
                    JournalRecord::Resumed { .. } => {}
                    JournalRecord::Linked { job_id, entities } => {
                        for e in entities {
                            entity_jobs.insert(e, job_id.clone());
                        }
                    }
                }
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path).map_err(io_err(&journal_path))?;
        let store = JobStore {
            root: root.to_path_buf(),
            clock,
            ttl,
            inner: Mutex::new(Inner { jobs, requests, finished_at, dedup, entity_jobs, journal }),
        };
        let mut unfinished = Vec::new();
        {
            let mut inner = store.lock();
            for id in &order {
                let state = inner.jobs[id].state;
                if state == JobState::Done {
                    let report = store.load_artifact::<DocumentReport>(id, REPORT)?;
                    let job = inner.jobs.get_mut(id).expect("replayed");
                    job.result = report;
                    job.progress = StageProgress { linking: 1.0, crawling: 1.0, scoring: 1.0 };
                } else if !state.is_terminal() {
                    let job = inner.jobs.get_mut(id).expect("replayed");
                    for stage in [Stage::Linking, Stage::Crawling, Stage::Scoring] {
                        if stage.state() < state {
                            *job.progress.slot(stage) = 1.0;
                        }
                    }
                    unfinished.push(id.clone());
                }
            }
        }
        Ok((store, unfinished))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn journal_path(&self) -> PathBuf {
        self.root.join("journal.jsonl")
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(id)
    }

    fn append(&self, inner: &mut Inner, record: &JournalRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        let path = self.journal_path();
        inner.journal.write_all(&line).map_err(io_err(&path))?;
        inner.journal.sync_data().map_err(io_err(&path))
    }

    /// Registers a job, or returns the existing one for an identical request
    /// that is still running or finished successfully within the TTL. The
    /// flag is true for a duplicate.
    pub fn submit(&self, request: AnalysisRequest, image: Option<&[u8]>) -> Result<(String, bool), StoreError> {
        let key = request.dedup_key();
        let now = self.clock.now();
        let mut inner = self.lock();
        if let Some(existing) = inner.dedup.get(&key).cloned() {
            let job = &inner.jobs[&existing];
            let live = match job.state {
                JobState::Failed => false,
                JobState::Done => inner.finished_at.get(&existing).is_some_and(|&t| now.saturating_sub(t) <= self.ttl.as_secs()),
                _ => true,
            };
            if live {
                return Ok((existing, true));
            }
        }
        let job_id = loop {
            let id = format!("{:032x}", rand::random::<u128>());
            if !inner.jobs.contains_key(&id) {
                break id;
            }
        };
        let dir = self.job_dir(&job_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        if let Some(image) = image {
            let path = dir.join(IMAGE);
            std::fs::write(&path, image).map_err(io_err(&path))?;
        }
        self.append(&mut inner, &JournalRecord::Submitted { job_id: job_id.clone(), at: now, request: request.clone() })?;
        inner.dedup.insert(key, job_id.clone());
        inner.requests.insert(job_id.clone(), request);
        inner.jobs.insert(job_id.clone(), new_job(job_id.clone(), now));
        Ok((job_id, false))
    }

    pub fn get(&self, id: &str) -> Option<AnalysisJob> {
        self.lock().jobs.get(id).cloned()
    }

    pub fn state(&self, id: &str) -> Option<JobState> {
        self.lock().jobs.get(id).map(|j| j.state)
    }

    pub fn request(&self, id: &str) -> Option<AnalysisRequest> {
        self.lock().requests.get(id).cloned()
    }

    pub fn image(&self, id: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.job_dir(id).join(IMAGE);
        match std::fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Jobs in non-terminal states.
    pub fn active_count(&self) -> usize {
        self.lock().jobs.values().filter(|j| !j.state.is_terminal()).count()
    }

    pub fn transition(&self, id: &str, to: JobState) -> Result<(), StoreError> {
        self.move_to(id, to, None, None)
    }

    pub fn fail(&self, id: &str, stage: Stage, message: String) -> Result<(), StoreError> {
        self.move_to(id, JobState::Failed, Some(stage), Some(message))
    }

    fn move_to(&self, id: &str, to: JobState, stage: Option<Stage>, error: Option<String>) -> Result<(), StoreError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let from = inner.jobs.get(id).ok_or_else(|| StoreError::UnknownJob(id.to_string()))?.state;
        if !from.can_move_to(to) {
            return Err(StoreError::IllegalTransition { job_id: id.to_string(), from, to });
        }
        self.append(&mut inner, &JournalRecord::Transition { job_id: id.to_string(), at: now, state: to, stage, error: error.clone() })?;
        if to.is_terminal() {
            inner.finished_at.insert(id.to_string(), now);
        }
        let job = inner.jobs.get_mut(id).expect("checked above");
        job.state = to;
        job.updated_at = now;
        job.error = error;
        job.failed_stage = stage;
        Ok(())
    }

    /// Records that a worker picked up an unfinished job after a restart.
    pub fn mark_resumed(&self, id: &str) -> Result<(), StoreError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let state = inner.jobs.get(id).ok_or_else(|| StoreError::UnknownJob(id.to_string()))?.state;
        self.append(&mut inner, &JournalRecord::Resumed { job_id: id.to_string(), at: now, state })
    }

    /// Raises a stage's progress; progress never decreases.
    pub fn set_progress(&self, id: &str, stage: Stage, fraction: f64) {
        if let Some(job) = self.lock().jobs.get_mut(id) {
            let slot = job.progress.slot(stage);
            *slot = slot.max(fraction.clamp(0.0, 1.0));
        }
    }

    pub fn note_entities(&self, id: &str, entities: &[KbId]) -> Result<(), StoreError> {
        let mut inner = self.lock();
        self.append(&mut inner, &JournalRecord::Linked { job_id: id.to_string(), entities: entities.to_vec() })?;
        for e in entities {
            inner.entity_jobs.insert(e.clone(), id.to_string());
        }
        Ok(())
    }

    /// The latest job that linked `kb_id`.
    pub fn job_for_entity(&self, kb_id: &KbId) -> Option<String> {
        self.lock().entity_jobs.get(kb_id).cloned()
    }

    /// Writes a stage output atomically.
    pub fn save_artifact<T: Serialize>(&self, id: &str, name: &str, value: &T) -> Result<(), StoreError> {
        let dir = self.job_dir(id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(name);
        let tmp = dir.join(format!("{name}.tmp"));
        let bytes = serde_json::to_vec(value).expect("artifact serializes");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).and_then(|_| f.sync_data()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn load_artifact<T: for<'de> Deserialize<'de>>(&self, id: &str, name: &str) -> Result<Option<T>, StoreError> {
        let path = self.job_dir(id).join(name);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map(Some).map_err(|e| StoreError::Corrupt { path: path.display().to_string(), message: e.to_string() })
    }

    /// Stores the report and moves the job to `done`.
    pub fn complete(&self, id: &str, report: DocumentReport) -> Result<(), StoreError> {
        self.save_artifact(id, REPORT, &report)?;
        self.transition(id, JobState::Done)?;
        if let Some(job) = self.lock().jobs.get_mut(id) {
            job.progress = StageProgress { linking: 1.0, crawling: 1.0, scoring: 1.0 };
            job.result = Some(report);
        }
        Ok(())
    }
}

fn new_job(job_id: String, at: Timestamp) -> AnalysisJob {
    AnalysisJob {
        job_id,
        state: JobState::Queued,
        submitted_at: at,
        updated_at: at,
        progress: StageProgress::default(),
        result: None,
        error: None,
        failed_stage: None,
    }
}

/// Reads every record of a journal file.
pub fn read_journal(path: &Path) -> Result<Vec<JournalRecord>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if let Ok(r) = serde_json::from_str(&line) {
            out.push(r);
        }
    }
    Ok(out)
}
