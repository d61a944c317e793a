use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{search_images, EvidenceError, ImageFetcher, ImageQuery, ImageSearch, ReferenceImage};
use crate::cache::{cache_key, Cache, DEFAULT_TTL};
use crate::entity::{KbId, LinkedEntity};

/// Reference images requested per entity unless configured otherwise.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceImageSet {
    pub kb_id: KbId,
    /// The entity's knowledge-base label, used verbatim as the search query.
    pub query: String,
    pub k: usize,
    pub images: Vec<ReferenceImage>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ReferenceImageSet {
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Retry rounds for failed image fetches. Only retryable failures are
/// retried; the backoff doubles every round.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub rounds: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { rounds: 1, base_backoff: Duration::from_millis(200) }
    }
}

/// Crawls and caches reference image sets.
pub struct EvidenceStore {
    search: Arc<dyn ImageSearch>,
    fetcher: Arc<dyn ImageFetcher>,
    cache: Arc<dyn Cache>,
    ttl: Duration,
    parallelism: usize,
    retry: RetryPolicy,
}

impl EvidenceStore {
    pub fn new(search: Arc<dyn ImageSearch>, fetcher: Arc<dyn ImageFetcher>, cache: Arc<dyn Cache>) -> Self {
        EvidenceStore { search, fetcher, cache, ttl: DEFAULT_TTL, parallelism: 4, retry: RetryPolicy::default() }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn key(kb_id: &KbId, k: usize) -> String {
        cache_key(&["refset", kb_id.as_str(), &k.to_string()])
    }

    /// The cached set for `kb_id`, if one was crawled within the TTL.
    pub fn cached_reference_set(&self, kb_id: &KbId, k: usize) -> Option<ReferenceImageSet> {
        let bytes = self.cache.get(&Self::key(kb_id, k))?;
        match serde_json::from_slice(&bytes) {
            Ok(set) => Some(set),
            Err(e) => {
                tracing::warn!(%kb_id, error = %e, "discarding undecodable reference set");
                None
            }
        }
    }

    /// Searches for the entity's label and fetches up to `k` images.
    /// Images that cannot be fetched are skipped with a warning, so the set
    /// may hold fewer than `k` images, or none. Non-empty sets are cached.
    pub fn get_reference_set(&self, entity: &LinkedEntity, k: usize) -> Result<ReferenceImageSet, EvidenceError> {
        if let Some(set) = self.cached_reference_set(&entity.kb_id, k) {
            return Ok(set);
        }
        let query = ImageQuery { kb_id: &entity.kb_id, label: &entity.label };
        let urls = search_images(self.search.as_ref(), query, k)?;
        let results = self.fetch_all(&urls);

        let mut images = Vec::new();
        let mut warnings = Vec::new();
        for (url, result) in urls.iter().zip(results) {
            match result {
                Ok(img) => images.push(img),
                Err(e) => warnings.push(format!("skipped {url}: {e}")),
            }
        }
        let set = ReferenceImageSet { kb_id: entity.kb_id.clone(), query: entity.label.clone(), k, images, warnings };
        if !set.is_empty() {
            match serde_json::to_vec(&set) {
                Ok(bytes) => self.cache.put(&Self::key(&entity.kb_id, k), &bytes, self.ttl),
                Err(e) => tracing::warn!(error = %e, "reference set not cacheable"),
            }
        }
        Ok(set)
    }

    fn fetch_with_retry(&self, url: &str) -> Result<ReferenceImage, EvidenceError> {
        let mut attempt = 0;
        loop {
            match self.fetcher.fetch(url) {
                Err(e) if e.is_retryable() && attempt < self.retry.rounds => {
                    std::thread::sleep(self.retry.base_backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Fetches every URL with bounded parallelism; results keep URL order.
    fn fetch_all(&self, urls: &[String]) -> Vec<Result<ReferenceImage, EvidenceError>> {
        crate::par::map_bounded(urls, self.parallelism, |_, url| self.fetch_with_retry(url))
    }
}
