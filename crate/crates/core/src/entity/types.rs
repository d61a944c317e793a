use std::fmt;

use serde::{Deserialize, Serialize};

use super::LinkError;
use crate::geo::Coordinate;

/// Knowledge-base identifier such as `Q42`.
///
/// Identifiers are non-empty, at most 64 bytes, and restricted to ASCII
/// alphanumerics plus `_` and `-`, which keeps them safe inside URLs, cache
/// keys and file names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KbId(String);

impl KbId {
    pub const MAX_LEN: usize = 64;

    pub fn new(id: impl Into<String>) -> Result<Self, LinkError> {
        let id = id.into();
        let well_formed = !id.is_empty()
            && id.len() <= Self::MAX_LEN
            && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        if well_formed {
            Ok(KbId(id))
        } else {
            Err(LinkError::InvalidKbId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for KbId {
    type Error = LinkError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        KbId::new(value)
    }
}

impl From<KbId> for String {
    fn from(id: KbId) -> Self {
        id.0
    }
}

impl fmt::Display for KbId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for KbId {
    type Err = LinkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KbId::new(s)
    }
}

/// A mention in a document, addressed by character (not byte) offsets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TextSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl TextSpan {
    /// Builds the span `text[start..end)` in character offsets.
    pub fn new(text: &str, start: usize, end: usize) -> Result<Self, LinkError> {
        if start >= end {
            return Err(LinkError::InvalidSpan { start, end });
        }
        let surface: String = text.chars().skip(start).take(end - start).collect();
        if surface.chars().count() != end - start {
            return Err(LinkError::InvalidSpan { start, end });
        }
        Ok(TextSpan { start, end, surface })
    }

    pub fn overlaps(&self, other: &TextSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// True when the span addresses `text` and its surface matches.
    pub fn is_valid_in(&self, text: &str) -> bool {
        TextSpan::new(text, self.start, self.end).is_ok_and(|s| s.surface == self.surface)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCandidate {
    pub kb_id: KbId,
    pub pagerank: f64,
    pub span: TextSpan,
}

impl EntityCandidate {
    pub fn new(kb_id: KbId, pagerank: f64, span: TextSpan) -> Result<Self, LinkError> {
        if !(pagerank.is_finite() && pagerank >= 0.0) {
            return Err(LinkError::InvalidPagerank(pagerank));
        }
        Ok(EntityCandidate { kb_id, pagerank, span })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Person,
    Location,
    Event,
}

impl EntityType {
    pub const ALL: [EntityType; 3] = [EntityType::Person, EntityType::Location, EntityType::Event];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::Person => "person",
            EntityType::Location => "location",
            EntityType::Event => "event",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EntityType {
    type Err = LinkError;

    /// Accepts singular, plural and one-letter forms (`person`, `persons`, `p`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p" | "person" | "persons" => Ok(EntityType::Person),
            "l" | "location" | "locations" => Ok(EntityType::Location),
            "e" | "event" | "events" => Ok(EntityType::Event),
            other => Err(LinkError::UnknownEntityType(other.to_string())),
        }
    }
}

/// The subset of knowledge-base facts the pipeline consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbRecord {
    pub kb_id: KbId,
    pub label: String,
    /// `P31` targets.
    #[serde(default)]
    pub instance_of: Vec<KbId>,
    /// `P625`.
    #[serde(default)]
    pub coordinate: Option<Coordinate>,
    /// `P279` targets.
    #[serde(default)]
    pub parent_classes: Vec<KbId>,
    /// Image URL derived from `P18`.
    #[serde(default)]
    pub depiction: Option<String>,
    /// `P27`.
    #[serde(default)]
    pub country_of_citizenship: Option<KbId>,
    /// `P21`.
    #[serde(default)]
    pub gender: Option<KbId>,
    #[serde(default)]
    pub description: Option<String>,
    /// Wikipedia article title in the record's language, when one exists.
    #[serde(default)]
    pub sitelink: Option<String>,
}

impl KbRecord {
    pub fn new(kb_id: KbId, label: impl Into<String>) -> Self {
        KbRecord {
            kb_id,
            label: label.into(),
            instance_of: Vec::new(),
            coordinate: None,
            parent_classes: Vec::new(),
            depiction: None,
            country_of_citizenship: None,
            gender: None,
            description: None,
            sitelink: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedEntity {
    pub kb_id: KbId,
    pub label: String,
    pub entity_type: EntityType,
    /// Every mention of this entity in the document, sorted by start offset.
    pub spans: Vec<TextSpan>,
    pub record: KbRecord,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kb_id_validation() {
        assert!(KbId::new("Q42").is_ok());
        assert!(KbId::new("QX").is_ok());
        assert!(KbId::new("").is_err());
        assert!(KbId::new("Q 42").is_err());
        assert!(KbId::new("../etc").is_err());
        assert!(KbId::new("a".repeat(65)).is_err());
        assert!(serde_json::from_str::<KbId>("\"bad id\"").is_err());
    }

    #[test]
    fn span_uses_char_offsets() {
        let text = "Köln and München";
        let span = TextSpan::new(text, 9, 16).unwrap();
        assert_eq!(span.surface, "München");
        assert!(TextSpan::new(text, 9, 17).is_err());
        assert!(TextSpan::new(text, 3, 3).is_err());
        assert!(span.is_valid_in(text));
        assert!(!span.is_valid_in("Köln and Muenchen"));
    }

    #[test]
    fn overlap() {
        let t = "abcdefgh";
        let a = TextSpan::new(t, 0, 3).unwrap();
        let b = TextSpan::new(t, 2, 5).unwrap();
        let c = TextSpan::new(t, 3, 5).unwrap();
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
    }

    #[test]
    fn negative_pagerank_rejected() {
        let span = TextSpan::new("ab", 0, 1).unwrap();
        assert!(EntityCandidate::new(KbId::new("Q1").unwrap(), -0.1, span.clone()).is_err());
        assert!(EntityCandidate::new(KbId::new("Q1").unwrap(), f64::NAN, span).is_err());
    }

    #[test]
    fn entity_type_parsing() {
        assert_eq!("p".parse::<EntityType>().unwrap(), EntityType::Person);
        assert_eq!("Locations".parse::<EntityType>().unwrap(), EntityType::Location);
        assert_eq!("event".parse::<EntityType>().unwrap(), EntityType::Event);
        assert!("org".parse::<EntityType>().is_err());
    }
}
