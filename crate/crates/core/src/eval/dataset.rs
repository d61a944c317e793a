use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::entity::{EntityType, KbId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySets {
    #[serde(default)]
    pub persons: Vec<KbId>,
    #[serde(default)]
    pub locations: Vec<KbId>,
    #[serde(default)]
    pub events: Vec<KbId>,
}

impl EntitySets {
    pub fn of_type(&self, t: EntityType) -> &[KbId] {
        match t {
            EntityType::Person => &self.persons,
            EntityType::Location => &self.locations,
            EntityType::Event => &self.events,
        }
    }
}

/// One evaluation document (a JSON line of the dataset file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub id: String,
    #[serde(default)]
    pub text: String,
    /// Relative paths resolve against the dataset file's directory.
    pub image: PathBuf,
    #[serde(default)]
    pub entities: EntitySets,
    /// Pre-chosen replacements: strategy name to (original to confounder).
    /// Entities without an entry are sampled.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tampered: BTreeMap<String, BTreeMap<KbId, KbId>>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub documents: Vec<EvalDocument>,
}

impl Dataset {
    pub fn from_jsonl(reader: impl BufRead, source: &str, base: &Path) -> Result<Self, EvalError> {
        let mut documents = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EvalError::Io { path: source.to_string(), source: e })?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |message: String| EvalError::Parse { path: source.to_string(), line: n + 1, message };
            let mut doc: EvalDocument = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            if doc.image.is_relative() {
                doc.image = base.join(&doc.image);
            }
            for replacements in doc.tampered.values() {
                if let Some((orig, _)) = replacements.iter().find(|(a, b)| a == b) {
                    return Err(parse(format!("tampered id {orig} equals the original")));
                }
            }
            documents.push(doc);
        }
        Ok(Dataset { documents })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let file = std::fs::File::open(path).map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Dataset::from_jsonl(std::io::BufReader::new(file), &path.display().to_string(), base)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}
