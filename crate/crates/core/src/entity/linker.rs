use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::recognizer::normalize_spans;
use super::{
    classify_entity, fallback_search, CandidateSource, EntityCandidate, EventList, KbId, KnowledgeBase, Language,
    LinkError, LinkedEntity, SpanRecognizer, TextSpan,
};

/// Highest pagerank wins; ties go to the lexicographically smallest id so
/// the choice never depends on input order.
pub fn select_candidate(candidates: &[EntityCandidate]) -> Result<&EntityCandidate, LinkError> {
    candidates
        .iter()
        .reduce(|best, c| match c.pagerank.total_cmp(&best.pagerank) {
            std::cmp::Ordering::Greater => c,
            std::cmp::Ordering::Equal if c.kb_id < best.kb_id => c,
            _ => best,
        })
        .ok_or(LinkError::NoCandidate)
}

/// Entities found in a document plus the non-fatal problems met on the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkingOutcome {
    pub entities: Vec<LinkedEntity>,
    pub warnings: Vec<String>,
}

#[derive(Clone)]
pub struct Linker {
    recognizer: Arc<dyn SpanRecognizer>,
    candidates: Option<Arc<dyn CandidateSource>>,
    kb: Arc<dyn KnowledgeBase>,
    events: Arc<EventList>,
}

impl Linker {
    pub fn new(
        recognizer: Arc<dyn SpanRecognizer>,
        candidates: Option<Arc<dyn CandidateSource>>,
        kb: Arc<dyn KnowledgeBase>,
        events: Arc<EventList>,
    ) -> Self {
        Linker { recognizer, candidates, kb, events }
    }

    pub fn knowledge_base(&self) -> &Arc<dyn KnowledgeBase> {
        &self.kb
    }

    pub fn events(&self) -> &EventList {
        &self.events
    }

    /// Recognizes, disambiguates and types every mention in `text`.
    ///
    /// External failures become warnings; only invalid input is an error.
    pub fn link_document(&self, text: &str, language: Language) -> Result<LinkingOutcome, LinkError> {
        if text.trim().is_empty() {
            return Err(LinkError::EmptyText);
        }
        let mut warnings = Vec::new();

        let spans = match self.recognizer.recognize(text, language) {
            Ok(spans) => normalize_spans(text, spans),
            Err(e) => {
                warnings.push(format!("recognition failed: {e}"));
                Vec::new()
            }
        };
        if spans.is_empty() {
            return Ok(LinkingOutcome { entities: Vec::new(), warnings });
        }

        let candidates = match &self.candidates {
            Some(source) => source.candidates(text, language).unwrap_or_else(|e| {
                warnings.push(format!("candidate lookup failed: {e}"));
                Vec::new()
            }),
            None => Vec::new(),
        };

        let mut mentions: BTreeMap<KbId, Vec<TextSpan>> = BTreeMap::new();
        for span in spans {
            let covering: Vec<EntityCandidate> =
                candidates.iter().filter(|c| c.span.overlaps(&span)).cloned().collect();
            let chosen = match select_candidate(&covering) {
                Ok(c) => Some(c.kb_id.clone()),
                Err(_) => match fallback_search(self.kb.as_ref(), &span, language) {
                    Ok(hit) => hit.map(|c| c.kb_id),
                    Err(e) => {
                        warnings.push(format!("search for {:?} failed: {e}", span.surface));
                        None
                    }
                },
            };
            if let Some(kb_id) = chosen {
                mentions.entry(kb_id).or_default().push(span);
            }
        }

        let mut entities = Vec::new();
        for (kb_id, spans) in mentions {
            let record = match self.kb.fetch_record(&kb_id, language) {
                Ok(r) => r,
                Err(e) => {
                    warnings.push(format!("fetching {kb_id} failed: {e}"));
                    continue;
                }
            };
            if let Some(entity_type) = classify_entity(&record, &self.events) {
                entities.push(LinkedEntity {
                    kb_id: record.kb_id.clone(),
                    label: record.label.clone(),
                    entity_type,
                    spans,
                    record,
                });
            }
        }
        entities.sort_by_key(|e| e.spans[0].start);
        Ok(LinkingOutcome { entities, warnings })
    }

    /// Resolves a claimed entity given as a knowledge-base id or a label.
    pub fn resolve_claim(&self, claim: &str, language: Language) -> Result<LinkedEntity, LinkError> {
        let claim = claim.trim();
        if claim.is_empty() {
            return Err(LinkError::EmptyText);
        }
        let span = TextSpan::new(claim, 0, claim.chars().count())?;
        let by_id = match KbId::new(claim) {
            Ok(id) => match self.kb.fetch_record(&id, language) {
                Ok(r) => Some(r),
                Err(LinkError::NotFound(_)) => None,
                Err(e) => return Err(e),
            },
            Err(_) => None,
        };
        let record = match by_id {
            Some(r) => r,
            None => {
                let hit = fallback_search(self.kb.as_ref(), &span, language)?.ok_or(LinkError::NoCandidate)?;
                self.kb.fetch_record(&hit.kb_id, language)?
            }
        };
        let entity_type = classify_entity(&record, &self.events).ok_or_else(|| LinkError::Untyped(record.kb_id.clone()))?;
        Ok(LinkedEntity { kb_id: record.kb_id.clone(), label: record.label.clone(), entity_type, spans: vec![span], record })
    }
}
