use std::path::PathBuf;
use std::time::Duration;

use serde_json::Value;

use super::EvidenceError;
use crate::entity::KbId;
use crate::http::{self, HttpFailure};

pub const DEFAULT_BING_URL: &str = "https://api.bing.microsoft.com/v7.0/images/search";

/// What to search for. Live engines query by `label`; offline stubs key
/// their fixtures by `kb_id`.
#[derive(Debug, Clone, Copy)]
pub struct ImageQuery<'a> {
    pub kb_id: &'a KbId,
    pub label: &'a str,
}

pub trait ImageSearch: Send + Sync {
    /// Up to `k` image URLs in engine rank order.
    fn search(&self, query: ImageQuery<'_>, k: usize) -> Result<Vec<String>, EvidenceError>;
}

/// Validates inputs and enforces the `k` cap regardless of how many hits
/// the engine returns.
pub fn search_images(engine: &dyn ImageSearch, query: ImageQuery<'_>, k: usize) -> Result<Vec<String>, EvidenceError> {
    if query.label.trim().is_empty() {
        return Err(EvidenceError::EmptyLabel);
    }
    if k == 0 {
        return Err(EvidenceError::InvalidK);
    }
    let mut urls = engine.search(query, k)?;
    urls.truncate(k);
    Ok(urls)
}

/// Bing Image Search v7 client.
pub struct BingImageSearch {
    endpoint: String,
    api_key: String,
    market: Option<String>,
    agent: ureq::Agent,
}

impl BingImageSearch {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        BingImageSearch { endpoint: endpoint.into(), api_key: api_key.into(), market: None, agent: http::agent(timeout) }
    }

    pub fn with_market(mut self, market: impl Into<String>) -> Self {
        self.market = Some(market.into());
        self
    }
}

pub(crate) fn parse_bing(body: &str) -> Result<Vec<String>, EvidenceError> {
    let v: Value = serde_json::from_str(body).map_err(|e| EvidenceError::Malformed(e.to_string()))?;
    let hits = v
        .get("value")
        .and_then(Value::as_array)
        .ok_or_else(|| EvidenceError::Malformed("missing `value` array".into()))?;
    Ok(hits
        .iter()
        .filter_map(|h| h.get("contentUrl").and_then(Value::as_str))
        .map(str::to_string)
        .collect())
}

impl ImageSearch for BingImageSearch {
    fn search(&self, query: ImageQuery<'_>, k: usize) -> Result<Vec<String>, EvidenceError> {
        let mut url = url::Url::parse(&self.endpoint).map_err(|_| EvidenceError::InvalidUrl(self.endpoint.clone()))?;
        url.query_pairs_mut()
            .append_pair("q", query.label)
            .append_pair("count", &k.to_string())
            .append_pair("safeSearch", "Moderate");
        if let Some(m) = &self.market {
            url.query_pairs_mut().append_pair("mkt", m);
        }
        let body = http::get_text(&self.agent, url.as_str(), &[("Ocp-Apim-Subscription-Key", &self.api_key)])
            .map_err(|e: HttpFailure| EvidenceError::Transport { retryable: e.retryable(), message: e.to_string() })?;
        parse_bing(&body)
    }
}

/// Offline engine over `root/<kb_id>/NN.<ext>`: the files of an entity's
/// directory in lexicographic order, as `file://` URLs.
#[derive(Debug, Clone)]
pub struct DirectoryImageSearch {
    root: PathBuf,
}

impl DirectoryImageSearch {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirectoryImageSearch { root: root.into() }
    }
}

impl ImageSearch for DirectoryImageSearch {
    fn search(&self, query: ImageQuery<'_>, k: usize) -> Result<Vec<String>, EvidenceError> {
        let dir = self.root.join(query.kb_id.as_str());
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let io = |e| EvidenceError::Io { path: dir.display().to_string(), source: e };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files
            .into_iter()
            .take(k)
            .map(|p| {
                let abs = std::path::absolute(&p).map_err(|e| EvidenceError::Io { path: p.display().to_string(), source: e })?;
                url::Url::from_file_path(&abs)
                    .map(|u| u.to_string())
                    .map_err(|_| EvidenceError::InvalidUrl(abs.display().to_string()))
            })
            .collect()
    }
}
