use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use super::{EntityType, KbId, KbRecord, LinkError};

/// Class of human beings; `P31` membership makes an entity a person.
pub const HUMAN_CLASS: &str = "Q5";

/// Set of knowledge-base ids accepted as events.
///
/// Loaded from a snapshot file with one id per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventList(BTreeSet<KbId>);

impl EventList {
    pub fn new(ids: impl IntoIterator<Item = KbId>) -> Self {
        EventList(ids.into_iter().collect())
    }

    pub fn from_reader(reader: impl BufRead, source: &str) -> Result<Self, LinkError> {
        let mut ids = BTreeSet::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| LinkError::Io { path: source.to_string(), source: e })?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let id = KbId::new(line).map_err(|e| LinkError::Parse {
                path: source.to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
            ids.insert(id);
        }
        Ok(EventList(ids))
    }

    pub fn load(path: &Path) -> Result<Self, LinkError> {
        let file = std::fs::File::open(path)
            .map_err(|e| LinkError::Io { path: path.display().to_string(), source: e })?;
        EventList::from_reader(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn contains(&self, id: &KbId) -> bool {
        self.0.contains(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Types a record, or returns `None` when it is neither a person, an event
/// nor a location.
///
/// Rules apply in the order person, event, location: events frequently carry
/// a coordinate and would otherwise be typed as locations.
pub fn classify_entity(record: &KbRecord, events: &EventList) -> Option<EntityType> {
    if record.instance_of.iter().any(|c| c.as_str() == HUMAN_CLASS) {
        Some(EntityType::Person)
    } else if events.contains(&record.kb_id) {
        Some(EntityType::Event)
    } else if record.coordinate.is_some() {
        Some(EntityType::Location)
    } else {
        None
    }
}
