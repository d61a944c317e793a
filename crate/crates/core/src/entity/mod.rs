//! Named entity linking: mentions in text resolved to knowledge-base records
//! and typed as persons, locations or events.
//!
//! The pipeline is split into replaceable parts:
//!
//! * a [`SpanRecognizer`] finds mention spans,
//! * an optional [`CandidateSource`] proposes ranked knowledge-base candidates
//!   for those spans,
//! * a [`KnowledgeBase`] fetches records and answers label searches for spans
//!   the candidate source did not cover,
//! * [`classify_entity`] keeps only persons, locations and events.
//!
//! [`Linker::link_document`] composes them.

mod annotate;
mod card;
mod classify;
mod kb;
mod linker;
mod recognizer;
mod types;
mod wikidata;

use std::fmt;

use thiserror::Error;

pub use annotate::{AnnotationClient, DEFAULT_ANNOTATION_URL};
pub use card::{fetch_entity_card, EntityCard};
pub use classify::{classify_entity, EventList, HUMAN_CLASS};
pub use kb::{fallback_search, CachedKnowledgeBase, FixtureKnowledgeBase, KnowledgeBase};
pub use linker::{select_candidate, Linker, LinkingOutcome};
pub use recognizer::{recognize_spans, CandidateSource, Gazetteer, SpanRecognizer};
pub use types::{EntityCandidate, EntityType, KbId, KbRecord, LinkedEntity, TextSpan};
pub use wikidata::{WikidataClient, DEFAULT_WIKIDATA_URL};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("text is empty")]
    EmptyText,
    #[error("unsupported language {0:?}; supported: en, de")]
    UnsupportedLanguage(String),
    #[error("malformed knowledge-base id {0:?}")]
    InvalidKbId(String),
    #[error("invalid span [{start}, {end})")]
    InvalidSpan { start: usize, end: usize },
    #[error("pagerank must be a non-negative number, got {0}")]
    InvalidPagerank(f64),
    #[error("unknown entity type {0:?}")]
    UnknownEntityType(String),
    #[error("no candidate to select")]
    NoCandidate,
    #[error("{0} is not a person, location or event")]
    Untyped(KbId),
    #[error("{0} not found in knowledge base")]
    NotFound(KbId),
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LinkError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LinkError::Transport { retryable: true, .. })
    }
}

/// Languages the linker accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    De,
}

impl Language {
    pub fn as_str(&self) -> &'static str {
        match self {
            Language::En => "en",
            Language::De => "de",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Language {
    type Err = LinkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "de" => Ok(Language::De),
            _ => Err(LinkError::UnsupportedLanguage(s.to_string())),
        }
    }
}
