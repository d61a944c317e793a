use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CrossModalScore;
use crate::entity::{KbId, LinkedEntity};

pub const REPORT_VERSION: u32 = 1;

/// Everything computed for one document. Field order is stable in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub report_version: u32,
    pub document_id: String,
    pub entities: Vec<LinkedEntity>,
    /// One score per entity of a requested type; scores without a value
    /// carry the reason in `absence`.
    pub scores: BTreeMap<KbId, CrossModalScore>,
    pub warnings: Vec<String>,
}

impl DocumentReport {
    pub fn entity(&self, kb_id: &KbId) -> Option<&LinkedEntity> {
        self.entities.iter().find(|e| &e.kb_id == kb_id)
    }

    /// Every scored id names a reported entity.
    pub fn is_consistent(&self) -> bool {
        self.scores.iter().all(|(id, s)| &s.kb_id == id && self.entity(id).is_some_and(|e| super::ScoreKind::for_type(e.entity_type) == s.kind))
    }
}
