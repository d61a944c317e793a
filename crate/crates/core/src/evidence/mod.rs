//! Visual evidence: up to `k` reference images per entity, found through an
//! image search engine and cached.

mod fetch;
mod refset;
mod search;

use thiserror::Error;

pub use fetch::{HttpImageFetcher, ImageFetcher, ImageLimits, ReferenceImage};
pub use refset::{EvidenceStore, ReferenceImageSet, RetryPolicy, DEFAULT_K};
pub use search::{search_images, BingImageSearch, DEFAULT_BING_URL, DirectoryImageSearch, ImageQuery, ImageSearch};

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("search label is empty")]
    EmptyLabel,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("malformed url {0:?}")]
    InvalidUrl(String),
    #[error("{url}: content type {content_type:?} is not an image")]
    NotAnImage { url: String, content_type: String },
    #[error("{url}: image larger than {limit} bytes")]
    TooLarge { url: String, limit: usize },
    #[error("{url}: image {width}x{height} below minimum dimension {min}")]
    TooSmall { url: String, width: u32, height: u32, min: u32 },
    #[error("{url}: undecodable image: {message}")]
    Undecodable { url: String, message: String },
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("malformed search response: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EvidenceError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EvidenceError::Transport { retryable: true, .. })
    }
}
