use serde::{Deserialize, Serialize};

use super::{KbId, KbRecord, KnowledgeBase, Language, LinkError};

/// Display record for an entity: what an assessor sees when hovering a
/// mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCard {
    pub kb_id: KbId,
    pub label: String,
    pub description: Option<String>,
    pub depiction_url: Option<String>,
    pub wikidata_url: String,
    pub wikipedia_url: Option<String>,
}

impl EntityCard {
    pub fn from_record(record: &KbRecord, language: Language) -> Self {
        let wikipedia_url = record.sitelink.as_ref().map(|title| {
            let mut url = url::Url::parse(&format!("https://{}.wikipedia.org/wiki/", language.as_str()))
                .expect("static url");
            url.path_segments_mut().expect("base url").pop().push(&title.replace(' ', "_"));
            url.to_string()
        });
        EntityCard {
            kb_id: record.kb_id.clone(),
            label: record.label.clone(),
            description: record.description.clone(),
            depiction_url: record.depiction.clone(),
            wikidata_url: format!("https://www.wikidata.org/wiki/{}", record.kb_id),
            wikipedia_url,
        }
    }
}

pub fn fetch_entity_card(kb: &dyn KnowledgeBase, kb_id: &str, language: Language) -> Result<EntityCard, LinkError> {
    let kb_id = KbId::new(kb_id)?;
    let record = kb.fetch_record(&kb_id, language)?;
    Ok(EntityCard::from_record(&record, language))
}
