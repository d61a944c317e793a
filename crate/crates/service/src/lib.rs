//! HTTP service over the analysis pipeline.
//!
//! `POST /v1/analyze` stores a job and returns its id at once; a pool of
//! worker threads moves each job through linking, crawling and scoring
//! while clients poll `GET /v1/jobs/{id}`. Jobs survive restarts through an
//! append-only journal (see [`jobs`]).

pub mod api;
pub mod article;
pub mod assemble;
pub mod config;
pub mod jobs;
pub mod worker;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use xmc_core::cache::{Cache, DiskCache};
use xmc_core::clock::{Clock, SystemClock};
use xmc_core::scoring::Engine;

pub use api::{router, AppState};
pub use article::{ArticleExtractor, ParsedArticle};
pub use config::{ConfigError, Settings};
pub use jobs::{AnalysisJob, AnalysisRequest, JobState, JobStore, Stage};
pub use worker::{JobQueue, Pipeline, WorkerPool};

/// JSON Schemas of every API payload, report and evaluation record.
pub const API_SCHEMA: &str = include_str!("../../../schemas/xmc-v1.schema.json");

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] jobs::StoreError),
    #[error(transparent)]
    Assemble(#[from] assemble::AssembleError),
    #[error("cache at {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A running job store, worker pool and the state the routes share.
pub struct Service {
    state: Arc<AppState>,
    pool: WorkerPool,
}

impl Service {
    /// Opens the job store under `settings.data_dir`, re-queues unfinished
    /// jobs and starts the workers.
    pub fn start(settings: &Settings, engine: Engine, articles: Arc<dyn ArticleExtractor>, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let (store, unfinished) = JobStore::open(&settings.data_dir, clock.clone(), settings.job_ttl())?;
        let store = Arc::new(store);
        let engine = Arc::new(engine);
        let queue = Arc::new(JobQueue::default());
        for id in unfinished {
            if store.state(&id) != Some(JobState::Queued) {
                store.mark_resumed(&id)?;
            }
            tracing::info!(job_id = %id, "re-queueing unfinished job");
            queue.push(id);
        }
        let pipeline = Arc::new(Pipeline::new(engine.clone(), store.clone()));
        let pool = WorkerPool::start(settings.workers, queue.clone(), pipeline);
        let state = Arc::new(AppState::new(
            store,
            engine,
            articles,
            queue,
            clock,
            settings.max_upload_bytes,
            settings.request_timeout(),
            settings.language,
        ));
        Ok(Service { state, pool })
    }

    /// Assembles providers, engine, caches and extractor from `settings`.
    /// Call outside any async runtime: a remote backend is contacted here.
    pub fn from_settings(settings: &Settings) -> Result<Self, ServiceError> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let cache_dir = settings.data_dir.join("cache");
        let cache: Arc<dyn Cache> = Arc::new(
            DiskCache::open(&cache_dir, clock.clone(), settings.cache_capacity)
                .map_err(|e| ServiceError::Cache { path: cache_dir.display().to_string(), source: e })?,
        );
        let providers = assemble::providers(&settings.providers)?;
        let engine = assemble::engine(settings, providers, clock.clone(), cache.clone())?;
        let articles = assemble::article_extractor(settings, cache)?;
        Service::start(settings, engine, articles, clock)
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    pub fn store(&self) -> &Arc<JobStore> {
        &self.state.store
    }

    pub fn router(&self) -> axum::Router {
        router(self.state.clone())
    }

    /// Stops taking jobs and waits up to `timeout` for running ones.
    pub fn shutdown(self, timeout: Duration) -> bool {
        self.pool.shutdown(timeout)
    }
}

/// Serves `service` on `listener` until `signal` resolves, then stops
/// accepting requests and drains running jobs for up to `drain`.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Service,
    signal: impl Future<Output = ()> + Send + 'static,
    drain: Duration,
) -> std::io::Result<bool> {
    let app = service.router();
    axum::serve(listener, app).with_graceful_shutdown(signal).await?;
    tracing::info!("http server stopped; draining jobs");
    tokio::task::spawn_blocking(move || service.shutdown(drain)).await.map_err(std::io::Error::other)
}
