use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use super::{EntityCandidate, KbId, KbRecord, Language, LinkError, TextSpan};
use crate::cache::{cache_key, Cache};

/// Read access to a knowledge base.
pub trait KnowledgeBase: Send + Sync {
    fn fetch_record(&self, kb_id: &KbId, language: Language) -> Result<KbRecord, LinkError>;

    /// Label search. Results are in the endpoint's rank order.
    fn search(&self, surface: &str, language: Language) -> Result<Vec<KbId>, LinkError>;
}

/// Resolves a span the candidate source left uncovered: first search hit,
/// or `None` when the search is empty.
pub fn fallback_search(
    kb: &dyn KnowledgeBase,
    span: &TextSpan,
    language: Language,
) -> Result<Option<EntityCandidate>, LinkError> {
    let hits = kb.search(&span.surface, language)?;
    Ok(hits
        .into_iter()
        .next()
        .map(|kb_id| EntityCandidate { kb_id, pagerank: 0.0, span: span.clone() }))
}

/// In-memory knowledge base loaded from JSON lines of [`KbRecord`].
///
/// Search matches labels case-insensitively and returns ids in file order,
/// unless an explicit search response was recorded with
/// [`FixtureKnowledgeBase::with_search`].
#[derive(Debug, Clone, Default)]
pub struct FixtureKnowledgeBase {
    records: BTreeMap<KbId, KbRecord>,
    order: Vec<KbId>,
    searches: BTreeMap<String, Vec<KbId>>,
}

impl FixtureKnowledgeBase {
    pub fn new(records: impl IntoIterator<Item = KbRecord>) -> Self {
        let mut kb = FixtureKnowledgeBase::default();
        for r in records {
            kb.insert(r);
        }
        kb
    }

    pub fn insert(&mut self, record: KbRecord) {
        if !self.records.contains_key(&record.kb_id) {
            self.order.push(record.kb_id.clone());
        }
        self.records.insert(record.kb_id.clone(), record);
    }

    /// Pins the result list returned for `surface`.
    pub fn with_search(mut self, surface: &str, hits: Vec<KbId>) -> Self {
        self.searches.insert(surface.to_string(), hits);
        self
    }

    pub fn from_jsonl(reader: impl BufRead, source: &str) -> Result<Self, LinkError> {
        let mut kb = FixtureKnowledgeBase::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| LinkError::Io { path: source.to_string(), source: e })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: KbRecord = serde_json::from_str(&line).map_err(|e| LinkError::Parse {
                path: source.to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
            kb.insert(record);
        }
        Ok(kb)
    }

    pub fn load(path: &Path) -> Result<Self, LinkError> {
        let file = std::fs::File::open(path)
            .map_err(|e| LinkError::Io { path: path.display().to_string(), source: e })?;
        FixtureKnowledgeBase::from_jsonl(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn records(&self) -> impl Iterator<Item = &KbRecord> {
        self.order.iter().filter_map(|id| self.records.get(id))
    }
}

impl KnowledgeBase for FixtureKnowledgeBase {
    fn fetch_record(&self, kb_id: &KbId, _language: Language) -> Result<KbRecord, LinkError> {
        self.records.get(kb_id).cloned().ok_or_else(|| LinkError::NotFound(kb_id.clone()))
    }

    fn search(&self, surface: &str, _language: Language) -> Result<Vec<KbId>, LinkError> {
        if let Some(hits) = self.searches.get(surface) {
            return Ok(hits.clone());
        }
        let needle = surface.trim().to_lowercase();
        Ok(self
            .records()
            .filter(|r| r.label.to_lowercase() == needle)
            .map(|r| r.kb_id.clone())
            .collect())
    }
}

/// Caches records and search results of another knowledge base.
pub struct CachedKnowledgeBase {
    inner: Arc<dyn KnowledgeBase>,
    cache: Arc<dyn Cache>,
    ttl: Duration,
}

impl CachedKnowledgeBase {
    pub fn new(inner: Arc<dyn KnowledgeBase>, cache: Arc<dyn Cache>, ttl: Duration) -> Self {
        CachedKnowledgeBase { inner, cache, ttl }
    }

    fn cached<T, F>(&self, key: String, load: F) -> Result<T, LinkError>
    where
        T: serde::Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<T, LinkError>,
    {
        if let Some(bytes) = self.cache.get(&key) {
            match serde_json::from_slice(&bytes) {
                Ok(v) => return Ok(v),
                Err(e) => tracing::warn!(%key, error = %e, "discarding undecodable cache entry"),
            }
        }
        let value = load()?;
        if let Ok(bytes) = serde_json::to_vec(&value) {
            self.cache.put(&key, &bytes, self.ttl);
        }
        Ok(value)
    }
}

impl KnowledgeBase for CachedKnowledgeBase {
    fn fetch_record(&self, kb_id: &KbId, language: Language) -> Result<KbRecord, LinkError> {
        let key = cache_key(&["kb", "record", language.as_str(), kb_id.as_str()]);
        self.cached(key, || self.inner.fetch_record(kb_id, language))
    }

    fn search(&self, surface: &str, language: Language) -> Result<Vec<KbId>, LinkError> {
        let key = cache_key(&["kb", "search", language.as_str(), surface]);
        self.cached(key, || self.inner.search(surface, language))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::MemoryCache;
    use crate::clock::ManualClock;
    use crate::geo::Coordinate;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn id(s: &str) -> KbId {
        KbId::new(s).unwrap()
    }

    fn span(s: &str) -> TextSpan {
        TextSpan::new(s, 0, s.chars().count()).unwrap()
    }

    #[test]
    fn fallback_absent_when_no_hit() {
        let kb = FixtureKnowledgeBase::default();
        assert!(fallback_search(&kb, &span("Nowhere"), Language::En).unwrap().is_none());
    }

    #[test]
    fn fallback_single_hit() {
        let kb = FixtureKnowledgeBase::default().with_search("Thing", vec![id("QX")]);
        let c = fallback_search(&kb, &span("Thing"), Language::En).unwrap().unwrap();
        assert_eq!(c.kb_id, id("QX"));
        assert_eq!(c.span.surface, "Thing");
    }

    #[test]
    fn fallback_takes_first_of_recorded_response() {
        // Recorded wbsearchentities response; the endpoint's order is kept.
        let body = include_str!("../../tests/fixtures/wbsearchentities_two_hits.json");
        let hits = super::super::wikidata::parse_search(body).unwrap();
        assert_eq!(hits, vec![id("QA"), id("QB")]);
        let kb = FixtureKnowledgeBase::default().with_search("Ambiguous", hits);
        let c = fallback_search(&kb, &span("Ambiguous"), Language::En).unwrap().unwrap();
        assert_eq!(c.kb_id, id("QA"));
    }

    #[test]
    fn fixture_fetch_passes_attributes_through() {
        let mut r = KbRecord::new(id("Q1715"), "Hannover");
        r.coordinate = Some(Coordinate::new(52.37, 9.73).unwrap());
        let kb = FixtureKnowledgeBase::new([r]);
        let got = kb.fetch_record(&id("Q1715"), Language::En).unwrap();
        assert_eq!(got.coordinate.unwrap().lat(), 52.37);
        assert!(matches!(kb.fetch_record(&id("Q2"), Language::En), Err(LinkError::NotFound(_))));
        assert_eq!(kb.search("hannover", Language::En).unwrap(), vec![id("Q1715")]);
    }

    #[test]
    fn jsonl_loading() {
        let data = "{\"kb_id\":\"Q76\",\"label\":\"Barack Obama\",\"instance_of\":[\"Q5\"]}\n\n{\"kb_id\":\"Q64\",\"label\":\"Berlin\"}\n";
        let kb = FixtureKnowledgeBase::from_jsonl(data.as_bytes(), "kb.jsonl").unwrap();
        assert_eq!(kb.records().count(), 2);
        let err = FixtureKnowledgeBase::from_jsonl("{\"kb_id\":\"\"}\n".as_bytes(), "kb.jsonl").unwrap_err();
        assert!(err.to_string().starts_with("kb.jsonl:1:"));
    }

    struct Counting {
        inner: FixtureKnowledgeBase,
        calls: AtomicUsize,
    }

    impl KnowledgeBase for Counting {
        fn fetch_record(&self, kb_id: &KbId, language: Language) -> Result<KbRecord, LinkError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.fetch_record(kb_id, language)
        }
        fn search(&self, surface: &str, language: Language) -> Result<Vec<KbId>, LinkError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.search(surface, language)
        }
    }

    #[test]
    fn second_fetch_within_ttl_is_served_from_cache() {
        let counting = Arc::new(Counting {
            inner: FixtureKnowledgeBase::new([KbRecord::new(id("Q64"), "Berlin")]),
            calls: AtomicUsize::new(0),
        });
        let clock = Arc::new(ManualClock::new(1_000));
        let cache = Arc::new(MemoryCache::new(clock.clone(), 100));
        let kb = CachedKnowledgeBase::new(counting.clone(), cache, Duration::from_secs(24 * 3600));
        kb.fetch_record(&id("Q64"), Language::En).unwrap();
        kb.fetch_record(&id("Q64"), Language::En).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
        kb.search("Berlin", Language::En).unwrap();
        kb.search("Berlin", Language::En).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 2);

        clock.advance(Duration::from_secs(24 * 3600 + 60));
        kb.fetch_record(&id("Q64"), Language::En).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 3);
        // Errors are not cached.
        assert!(kb.fetch_record(&id("Q1"), Language::En).is_err());
        assert!(kb.fetch_record(&id("Q1"), Language::En).is_err());
        assert_eq!(counting.calls.load(Ordering::SeqCst), 5);
    }
}
