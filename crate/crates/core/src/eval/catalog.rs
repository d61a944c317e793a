use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::entity::{EntityType, KbId};
use crate::geo::Coordinate;

/// Which knowledge-base relations count as an event's parent classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParentClassMode {
    /// `instance_of` targets only.
    InstanceOf,
    /// `subclass_of` targets only.
    SubclassOf,
    /// Both, plus any explicit `parent_classes`.
    #[default]
    Union,
}

impl std::str::FromStr for ParentClassMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "instance-of" => Ok(ParentClassMode::InstanceOf),
            "subclass-of" => Ok(ParentClassMode::SubclassOf),
            "union" => Ok(ParentClassMode::Union),
            other => Err(format!("unknown parent class mode {other:?} (instance-of, subclass-of, union)")),
        }
    }
}

/// One candidate for tampering, with the attributes strategies match on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntity {
    pub kb_id: KbId,
    pub entity_type: EntityType,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<KbId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country_of_citizenship: Option<KbId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinate: Option<Coordinate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_type: Option<KbId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parent_classes: Vec<KbId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instance_of: Vec<KbId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subclass_of: Vec<KbId>,
    /// Relative paths resolve against the catalog file's directory.
    #[serde(default)]
    pub reference_images: Vec<PathBuf>,
}

impl CatalogEntity {
    pub fn new(kb_id: KbId, entity_type: EntityType, label: impl Into<String>) -> Self {
        CatalogEntity {
            kb_id,
            entity_type,
            label: label.into(),
            gender: None,
            country_of_citizenship: None,
            coordinate: None,
            location_type: None,
            parent_classes: Vec::new(),
            instance_of: Vec::new(),
            subclass_of: Vec::new(),
            reference_images: Vec::new(),
        }
    }

    pub fn parents(&self, mode: ParentClassMode) -> BTreeSet<&KbId> {
        match mode {
            ParentClassMode::InstanceOf => self.instance_of.iter().collect(),
            ParentClassMode::SubclassOf => self.subclass_of.iter().collect(),
            ParentClassMode::Union => self.parent_classes.iter().chain(&self.instance_of).chain(&self.subclass_of).collect(),
        }
    }
}

/// Catalog entities ordered by kb_id.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entities: Vec<CatalogEntity>,
    index: HashMap<KbId, usize>,
}

impl Catalog {
    /// Later duplicates of a kb_id replace earlier ones.
    pub fn new(entities: impl IntoIterator<Item = CatalogEntity>) -> Self {
        let mut by_id: std::collections::BTreeMap<KbId, CatalogEntity> = Default::default();
        for e in entities {
            by_id.insert(e.kb_id.clone(), e);
        }
        let entities: Vec<CatalogEntity> = by_id.into_values().collect();
        let index = entities.iter().enumerate().map(|(i, e)| (e.kb_id.clone(), i)).collect();
        Catalog { entities, index }
    }

    pub fn from_jsonl(reader: impl BufRead, source: &str, base: &Path) -> Result<Self, EvalError> {
        let mut entities = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EvalError::Io { path: source.to_string(), source: e })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut e: CatalogEntity = serde_json::from_str(&line)
                .map_err(|err| EvalError::Parse { path: source.to_string(), line: n + 1, message: err.to_string() })?;
            for p in &mut e.reference_images {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            entities.push(e);
        }
        Ok(Catalog::new(entities))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let file = std::fs::File::open(path).map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Catalog::from_jsonl(std::io::BufReader::new(file), &path.display().to_string(), base)
    }

    pub fn get(&self, kb_id: &KbId) -> Option<&CatalogEntity> {
        self.index.get(kb_id).map(|&i| &self.entities[i])
    }

    pub fn entities(&self) -> &[CatalogEntity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parses_jsonl_and_resolves_paths() {
        let text = r#"{"kb_id":"Q2","entity_type":"person","label":"B","gender":"Q6581072","reference_images":["img/b.png"]}
{"kb_id":"Q1","entity_type":"location","label":"A","coordinate":{"lat":52.5,"lon":13.4},"location_type":"Q515"}
"#;
        let c = Catalog::from_jsonl(Cursor::new(text), "catalog.jsonl", Path::new("/data")).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.entities()[0].kb_id.as_str(), "Q1");
        assert_eq!(c.get(&KbId::new("Q2").unwrap()).unwrap().reference_images[0], PathBuf::from("/data/img/b.png"));
        let bad = Catalog::from_jsonl(Cursor::new("{\"kb_id\":\"\"}\n"), "c.jsonl", Path::new("."));
        assert!(matches!(bad, Err(EvalError::Parse { line: 1, .. })));
    }

    #[test]
    fn parent_modes() {
        let mut e = CatalogEntity::new(KbId::new("Q9").unwrap(), EntityType::Event, "E");
        e.instance_of = vec![KbId::new("Q1").unwrap()];
        e.subclass_of = vec![KbId::new("Q2").unwrap()];
        assert_eq!(e.parents(ParentClassMode::InstanceOf).len(), 1);
        assert_eq!(e.parents(ParentClassMode::SubclassOf).len(), 1);
        assert_eq!(e.parents(ParentClassMode::Union).len(), 2);
    }
}
