use std::time::Duration;

use serde_json::Value;

use super::{KbId, KbRecord, KnowledgeBase, Language, LinkError};
use crate::geo::Coordinate;
use crate::http::{self, HttpFailure};

pub const DEFAULT_WIKIDATA_URL: &str = "https://www.wikidata.org";
const COMMONS_FILE_PATH: &str = "https://commons.wikimedia.org/wiki/Special:FilePath/";

/// Wikidata client using the `wbgetentities` and `wbsearchentities` API
/// actions.
#[derive(Debug, Clone)]
pub struct WikidataClient {
    base_url: String,
    agent: ureq::Agent,
}

impl WikidataClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        WikidataClient { base_url: base_url.into().trim_end_matches('/').to_string(), agent: http::agent(timeout) }
    }

    fn api(&self, params: &[(&str, &str)]) -> Result<String, LinkError> {
        let mut url = url::Url::parse(&format!("{}/w/api.php", self.base_url))
            .map_err(|e| LinkError::Transport { message: e.to_string(), retryable: false })?;
        url.query_pairs_mut().extend_pairs(params).append_pair("format", "json");
        http::get_text(&self.agent, url.as_str(), &[]).map_err(|e: HttpFailure| LinkError::Transport {
            retryable: e.retryable(),
            message: e.to_string(),
        })
    }
}

impl KnowledgeBase for WikidataClient {
    fn fetch_record(&self, kb_id: &KbId, language: Language) -> Result<KbRecord, LinkError> {
        let lang = language.as_str();
        let sitefilter = format!("{lang}wiki");
        let languages = format!("{lang}|en");
        let body = self.api(&[
            ("action", "wbgetentities"),
            ("ids", kb_id.as_str()),
            ("props", "labels|descriptions|claims|sitelinks"),
            ("languages", &languages),
            ("sitefilter", &sitefilter),
        ])?;
        parse_entity(&body, kb_id, language)
    }

    fn search(&self, surface: &str, language: Language) -> Result<Vec<KbId>, LinkError> {
        let body = self.api(&[
            ("action", "wbsearchentities"),
            ("search", surface),
            ("language", language.as_str()),
            ("type", "item"),
            ("limit", "10"),
        ])?;
        parse_search(&body)
    }
}

pub(crate) fn parse_search(body: &str) -> Result<Vec<KbId>, LinkError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LinkError::Malformed(e.to_string()))?;
    let hits = v
        .get("search")
        .and_then(Value::as_array)
        .ok_or_else(|| LinkError::Malformed("missing `search` array".into()))?;
    hits.iter()
        .filter_map(|h| h.get("id").and_then(Value::as_str))
        .map(KbId::new)
        .collect()
}

fn localized(v: &Value, field: &str, language: Language) -> Option<String> {
    let map = v.get(field)?.as_object()?;
    map.get(language.as_str())
        .or_else(|| map.get("en"))
        .or_else(|| map.values().next())
        .and_then(|l| l.get("value"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

/// `datavalue.value` of every non-deprecated statement for `property`.
fn claim_values<'a>(entity: &'a Value, property: &str) -> Vec<&'a Value> {
    entity
        .get("claims")
        .and_then(|c| c.get(property))
        .and_then(Value::as_array)
        .map(|statements| {
            statements
                .iter()
                .filter(|s| s.get("rank").and_then(Value::as_str) != Some("deprecated"))
                .filter_map(|s| s.get("mainsnak")?.get("datavalue")?.get("value"))
                .collect()
        })
        .unwrap_or_default()
}

fn item_ids(entity: &Value, property: &str) -> Vec<KbId> {
    claim_values(entity, property)
        .into_iter()
        .filter_map(|v| v.get("id").and_then(Value::as_str))
        .filter_map(|id| KbId::new(id).ok())
        .collect()
}

pub(crate) fn commons_file_url(file_name: &str) -> String {
    let mut url = url::Url::parse(COMMONS_FILE_PATH).expect("static url");
    url.path_segments_mut()
        .expect("base url")
        .pop()
        .push(&file_name.replace(' ', "_"));
    url.to_string()
}

pub(crate) fn parse_entity(body: &str, requested: &KbId, language: Language) -> Result<KbRecord, LinkError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LinkError::Malformed(e.to_string()))?;
    if let Some(code) = v.get("error").and_then(|e| e.get("code")).and_then(Value::as_str) {
        return if code == "no-such-entity" {
            Err(LinkError::NotFound(requested.clone()))
        } else {
            Err(LinkError::Malformed(format!("api error {code}")))
        };
    }
    let entities = v
        .get("entities")
        .and_then(Value::as_object)
        .ok_or_else(|| LinkError::Malformed("missing `entities`".into()))?;
    // Redirects come back under the target id.
    let entity = entities
        .get(requested.as_str())
        .or_else(|| entities.values().next())
        .ok_or_else(|| LinkError::NotFound(requested.clone()))?;
    if entity.get("missing").is_some() {
        return Err(LinkError::NotFound(requested.clone()));
    }
    let kb_id = entity
        .get("id")
        .and_then(Value::as_str)
        .map(KbId::new)
        .transpose()?
        .unwrap_or_else(|| requested.clone());

    let label = localized(entity, "labels", language).unwrap_or_else(|| kb_id.to_string());
    let mut record = KbRecord::new(kb_id, label);
    record.description = localized(entity, "descriptions", language);
    record.instance_of = item_ids(entity, "P31");
    record.parent_classes = item_ids(entity, "P279");
    record.country_of_citizenship = item_ids(entity, "P27").into_iter().next();
    record.gender = item_ids(entity, "P21").into_iter().next();
    record.coordinate = claim_values(entity, "P625").into_iter().find_map(|c| {
        let lat = c.get("latitude")?.as_f64()?;
        let lon = c.get("longitude")?.as_f64()?;
        Coordinate::normalized(lat, lon).ok()
    });
    record.depiction = claim_values(entity, "P18")
        .into_iter()
        .find_map(Value::as_str)
        .map(commons_file_url);
    record.sitelink = entity
        .get("sitelinks")
        .and_then(|s| s.get(format!("{}wiki", language.as_str())))
        .and_then(|s| s.get("title"))
        .and_then(Value::as_str)
        .map(str::to_string);
    Ok(record)
}
