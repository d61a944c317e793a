use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EvidenceError;
use crate::clock::{Clock, Timestamp};
use crate::http::{self, HttpFailure};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceImage {
    pub source_url: String,
    #[serde(with = "b64")]
    pub content: Vec<u8>,
    pub content_type: String,
    pub fetched_at: Timestamp,
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// Quality floor for evidence images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageLimits {
    pub max_bytes: usize,
    /// Both decoded dimensions must reach this many pixels.
    pub min_dimension: u32,
}

impl Default for ImageLimits {
    fn default() -> Self {
        ImageLimits { max_bytes: 10 * 1024 * 1024, min_dimension: 64 }
    }
}

impl ImageLimits {
    /// Checks size and decoded dimensions of `content` fetched from `url`.
    pub fn check(&self, url: &str, content: &[u8]) -> Result<(), EvidenceError> {
        if content.len() > self.max_bytes {
            return Err(EvidenceError::TooLarge { url: url.to_string(), limit: self.max_bytes });
        }
        let (width, height) = image::ImageReader::new(Cursor::new(content))
            .with_guessed_format()
            .map_err(|e| EvidenceError::Undecodable { url: url.to_string(), message: e.to_string() })?
            .into_dimensions()
            .map_err(|e| EvidenceError::Undecodable { url: url.to_string(), message: e.to_string() })?;
        if width < self.min_dimension || height < self.min_dimension {
            return Err(EvidenceError::TooSmall { url: url.to_string(), width, height, min: self.min_dimension });
        }
        Ok(())
    }
}

pub trait ImageFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<ReferenceImage, EvidenceError>;
}

/// Fetches `http(s)://` URLs over the network and `file://` URLs from disk.
pub struct HttpImageFetcher {
    agent: ureq::Agent,
    clock: Arc<dyn Clock>,
    limits: ImageLimits,
}

impl HttpImageFetcher {
    pub fn new(clock: Arc<dyn Clock>, timeout: Duration, limits: ImageLimits) -> Self {
        HttpImageFetcher { agent: http::agent(timeout), clock, limits }
    }

    fn fetch_http(&self, url: &str) -> Result<(Vec<u8>, String), EvidenceError> {
        let transport = |e: HttpFailure| EvidenceError::Transport { retryable: e.retryable(), message: format!("{url}: {e}") };
        let mut resp = self.agent.get(url).call().map_err(|e| transport(e.into()))?;
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .split(';')
            .next()
            .unwrap_or("")
            .trim()
            .to_ascii_lowercase();
        if !content_type.starts_with("image/") {
            return Err(EvidenceError::NotAnImage { url: url.to_string(), content_type });
        }
        let content = resp
            .body_mut()
            .with_config()
            .limit(self.limits.max_bytes as u64)
            .read_to_vec()
            .map_err(|e| match e {
                ureq::Error::BodyExceedsLimit(_) => EvidenceError::TooLarge { url: url.to_string(), limit: self.limits.max_bytes },
                other => transport(other.into()),
            })?;
        Ok((content, content_type))
    }

    fn fetch_file(&self, url: &url::Url) -> Result<(Vec<u8>, String), EvidenceError> {
        let path = url.to_file_path().map_err(|_| EvidenceError::InvalidUrl(url.to_string()))?;
        let content = std::fs::read(&path).map_err(|e| EvidenceError::Io { path: path.display().to_string(), source: e })?;
        let content_type = image::guess_format(&content)
            .map(|f| f.to_mime_type().to_string())
            .map_err(|_| EvidenceError::NotAnImage { url: url.to_string(), content_type: "application/octet-stream".into() })?;
        Ok((content, content_type))
    }
}

impl ImageFetcher for HttpImageFetcher {
    fn fetch(&self, url: &str) -> Result<ReferenceImage, EvidenceError> {
        let parsed = url::Url::parse(url).map_err(|_| EvidenceError::InvalidUrl(url.to_string()))?;
        let (content, content_type) = match parsed.scheme() {
            "http" | "https" => self.fetch_http(url)?,
            "file" => self.fetch_file(&parsed)?,
            _ => return Err(EvidenceError::InvalidUrl(url.to_string())),
        };
        if content.is_empty() {
            return Err(EvidenceError::Undecodable { url: url.to_string(), message: "empty body".into() });
        }
        self.limits.check(url, &content)?;
        Ok(ReferenceImage { source_url: url.to_string(), content, content_type, fetched_at: self.clock.now() })
    }
}
