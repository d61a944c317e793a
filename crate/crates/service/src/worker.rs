//! Job execution: the stage pipeline and the worker pool that drives it.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use xmc_core::entity::LinkingOutcome;
use xmc_core::scoring::{CrawlOutcome, DocumentReport, Engine};

use crate::jobs::{JobState, JobStore, Stage, StoreError};

const LINKED: &str = "linked.json";
const CRAWLED: &str = "crawl.json";

/// Runs the stages of stored jobs against an engine.
pub struct Pipeline {
    engine: Arc<Engine>,
    store: Arc<JobStore>,
}

impl Pipeline {
    pub fn new(engine: Arc<Engine>, store: Arc<JobStore>) -> Self {
        Pipeline { engine, store }
    }

    /// Runs the job to a terminal state.
    pub fn run(&self, id: &str) -> Result<JobState, StoreError> {
        loop {
            let state = self.step(id)?;
            if state.is_terminal() {
                return Ok(state);
            }
        }
    }

    /// Executes whatever comes next for the job and returns its new state.
    /// Each stage reads only the outputs of earlier stages, so repeating a
    /// stage after a crash is harmless.
    pub fn step(&self, id: &str) -> Result<JobState, StoreError> {
        let store = &self.store;
        let state = store.state(id).ok_or_else(|| StoreError::UnknownJob(id.to_string()))?;
        match state {
            JobState::Queued => store.transition(id, JobState::Linking)?,
            JobState::Linking => match self.link(id)? {
                Ok(linked) => {
                    let ids: Vec<_> = linked.entities.iter().map(|e| e.kb_id.clone()).collect();
                    store.save_artifact(id, LINKED, &linked)?;
                    store.note_entities(id, &ids)?;
                    store.set_progress(id, Stage::Linking, 1.0);
                    store.transition(id, JobState::Crawling)?;
                }
                Err(message) => store.fail(id, Stage::Linking, message)?,
            },
            JobState::Crawling => {
                let linked = self.linked(id)?;
                let request = store.request(id).ok_or_else(|| StoreError::UnknownJob(id.to_string()))?;
                let types = self.effective_types(&request, &linked);
                let crawl = self.engine.crawl(&linked.entities, &types, &|f| store.set_progress(id, Stage::Crawling, f));
                store.save_artifact(id, CRAWLED, &crawl)?;
                store.transition(id, JobState::Scoring)?;
            }
            JobState::Scoring => {
                let linked = self.linked(id)?;
                let crawl: CrawlOutcome = store.load_artifact(id, CRAWLED)?.ok_or_else(|| missing(id, CRAWLED))?;
                let request = store.request(id).ok_or_else(|| StoreError::UnknownJob(id.to_string()))?;
                let image = store.image(id)?;
                let types = self.effective_types(&request, &linked);
                let scored = self.engine.score(image.as_deref(), &linked.entities, &crawl, &types, &|f| store.set_progress(id, Stage::Scoring, f));
                if scored.all_provider_failures() {
                    let detail = scored.warnings.first().cloned().unwrap_or_default();
                    store.fail(id, Stage::Scoring, format!("every score failed at a feature provider: {detail}"))?;
                } else {
                    store.complete(id, DocumentReport::from_stages(id, linked, crawl, scored))?;
                }
            }
            JobState::Done | JobState::Failed => {}
        }
        Ok(store.state(id).expect("job exists"))
    }

    fn link(&self, id: &str) -> Result<Result<LinkingOutcome, String>, StoreError> {
        let request = self.store.request(id).ok_or_else(|| StoreError::UnknownJob(id.to_string()))?;
        let outcome = match &request.entity {
            Some(claim) => self
                .engine
                .linker()
                .resolve_claim(claim, request.language)
                .map(|e| LinkingOutcome { entities: vec![e], warnings: Vec::new() }),
            None => self.engine.link(&request.text, request.language),
        };
        Ok(outcome.map_err(|e| e.to_string()))
    }

    fn linked(&self, id: &str) -> Result<LinkingOutcome, StoreError> {
        self.store.load_artifact(id, LINKED)?.ok_or_else(|| missing(id, LINKED))
    }

    /// A claimed entity is scored whatever its type.
    fn effective_types(&self, request: &crate::jobs::AnalysisRequest, linked: &LinkingOutcome) -> std::collections::BTreeSet<xmc_core::entity::EntityType> {
        if request.entity.is_some() {
            linked.entities.iter().map(|e| e.entity_type).collect()
        } else {
            request.types.clone()
        }
    }
}

fn missing(id: &str, name: &str) -> StoreError {
    StoreError::Corrupt { path: format!("jobs/{id}/{name}"), message: "stage output missing".into() }
}

/// FIFO of job ids. Closing it stops hand-outs; queued ids stay queued in
/// the journal and resume on the next start.
#[derive(Default)]
pub struct JobQueue {
    inner: Mutex<(VecDeque<String>, bool)>,
    ready: Condvar,
}

impl JobQueue {
    pub fn push(&self, id: String) {
        let mut g = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        g.0.push_back(id);
        self.ready.notify_one();
    }

    /// Blocks until a job is available; `None` once closed.
    pub fn pop(&self) -> Option<String> {
        let mut g = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        loop {
            if g.1 {
                return None;
            }
            if let Some(id) = g.0.pop_front() {
                return Some(id);
            }
            g = self.ready.wait(g).unwrap_or_else(|p| p.into_inner());
        }
    }

    pub fn close(&self) {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).1 = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed set of worker threads. A job is owned by one worker from pick-up
/// to its terminal state.
pub struct WorkerPool {
    queue: Arc<JobQueue>,
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn start(workers: usize, queue: Arc<JobQueue>, pipeline: Arc<Pipeline>) -> Self {
        let handles = (0..workers.max(1))
            .map(|n| {
                let queue = queue.clone();
                let pipeline = pipeline.clone();
                std::thread::Builder::new()
                    .name(format!("xmc-worker-{n}"))
                    .spawn(move || {
                        while let Some(id) = queue.pop() {
                            let span = tracing::info_span!("job", job_id = %id);
                            let _enter = span.enter();
                            match pipeline.run(&id) {
                                Ok(state) => tracing::info!(%state, "job finished"),
                                Err(e) => tracing::error!(error = %e, "job store error"),
                            }
                        }
                    })
                    .expect("spawn worker")
            })
            .collect();
        WorkerPool { queue, handles }
    }

    /// Stops taking jobs and waits up to `timeout` for running ones.
    /// Returns true when every worker finished in time.
    pub fn shutdown(self, timeout: Duration) -> bool {
        self.queue.close();
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline && !self.handles.iter().all(|h| h.is_finished()) {
            std::thread::sleep(Duration::from_millis(10));
        }
        let drained = self.handles.iter().all(|h| h.is_finished());
        if drained {
            for h in self.handles {
                let _ = h.join();
            }
        } else {
            tracing::warn!("drain timeout reached with jobs still running");
        }
        drained
    }
}
