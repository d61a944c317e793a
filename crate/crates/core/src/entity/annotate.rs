use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;

use super::recognizer::normalize_spans;
use super::{CandidateSource, EntityCandidate, KbId, Language, LinkError, SpanRecognizer, TextSpan};
use crate::http::{self, HttpFailure};

pub const DEFAULT_ANNOTATION_URL: &str = "http://www.wikifier.org/annotate-article";

/// Client for a Wikifier-style annotation service: the text is posted as a
/// form and the service answers with ranked knowledge-base annotations, each
/// supported by one or more character ranges.
pub struct AnnotationClient {
    endpoint: String,
    user_key: String,
    agent: ureq::Agent,
    // The recognizer and candidate roles are usually asked about the same
    // text back to back; one response serves both.
    last: Mutex<Option<(String, Language, Vec<EntityCandidate>)>>,
}

#[derive(Deserialize)]
struct Response {
    #[serde(default)]
    annotations: Vec<Annotation>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Annotation {
    wiki_data_item_id: Option<String>,
    #[serde(default)]
    page_rank: f64,
    #[serde(default)]
    support: Vec<Support>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Support {
    ch_from: usize,
    /// Inclusive.
    ch_to: usize,
}

impl AnnotationClient {
    pub fn new(endpoint: impl Into<String>, user_key: impl Into<String>, timeout: Duration) -> Self {
        AnnotationClient {
            endpoint: endpoint.into(),
            user_key: user_key.into(),
            agent: http::agent(timeout),
            last: Mutex::new(None),
        }
    }

    fn annotate(&self, text: &str, language: Language) -> Result<Vec<EntityCandidate>, LinkError> {
        if let Some((t, l, c)) = self.last.lock().expect("annotation cache poisoned").as_ref() {
            if t == text && *l == language {
                return Ok(c.clone());
            }
        }
        let form = [
            ("text", text),
            ("lang", language.as_str()),
            ("userKey", self.user_key.as_str()),
            ("support", "true"),
            ("ranges", "false"),
            ("includeCosines", "false"),
            ("nTopDfValuesToIgnore", "200"),
            ("nWordsToIgnoreFromList", "200"),
        ];
        let body = self
            .agent
            .post(&self.endpoint)
            .send_form(form)
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| {
                let e = HttpFailure::from(e);
                LinkError::Transport { retryable: e.retryable(), message: e.to_string() }
            })?;
        let candidates = parse_annotations(&body, text)?;
        *self.last.lock().expect("annotation cache poisoned") = Some((text.to_string(), language, candidates.clone()));
        Ok(candidates)
    }
}

pub(crate) fn parse_annotations(body: &str, text: &str) -> Result<Vec<EntityCandidate>, LinkError> {
    let resp: Response = serde_json::from_str(body).map_err(|e| LinkError::Malformed(e.to_string()))?;
    let mut out = Vec::new();
    for a in resp.annotations {
        let Some(kb_id) = a.wiki_data_item_id.and_then(|id| KbId::new(id).ok()) else {
            continue;
        };
        let pagerank = if a.page_rank.is_finite() && a.page_rank >= 0.0 { a.page_rank } else { 0.0 };
        for s in a.support {
            match TextSpan::new(text, s.ch_from, s.ch_to + 1) {
                Ok(span) => out.push(EntityCandidate { kb_id: kb_id.clone(), pagerank, span }),
                Err(_) => tracing::debug!(from = s.ch_from, to = s.ch_to, "dropping out-of-range support"),
            }
        }
    }
    Ok(out)
}

impl SpanRecognizer for AnnotationClient {
    fn recognize(&self, text: &str, language: Language) -> Result<Vec<TextSpan>, LinkError> {
        let spans = self.annotate(text, language)?.into_iter().map(|c| c.span).collect();
        Ok(normalize_spans(text, spans))
    }
}

impl CandidateSource for AnnotationClient {
    fn candidates(&self, text: &str, language: Language) -> Result<Vec<EntityCandidate>, LinkError> {
        self.annotate(text, language)
    }
}
