use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{entity_similarity, Absence, CrossModalScore, DocumentReport, ScoreKind, REPORT_VERSION};
use crate::entity::{EntityType, KbId, Language, LinkError, LinkedEntity, Linker, LinkingOutcome};
use crate::evidence::{EvidenceStore, ReferenceImageSet, DEFAULT_K};
use crate::features::{
    build_person_profile, build_place_or_event_profile, ClusterConfig, EmbeddingVector, FeatureError, Modality, Providers,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Reference images per entity.
    pub k: usize,
    pub cluster: ClusterConfig,
    /// Entities crawled or scored concurrently.
    pub parallelism: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { k: DEFAULT_K, cluster: ClusterConfig::default(), parallelism: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Entity types to score; other entities are reported but not scored.
    pub types: BTreeSet<EntityType>,
    pub language: Language,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { types: EntityType::ALL.into_iter().collect(), language: Language::En }
    }
}

/// Reference sets of the crawled entities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrawlOutcome {
    pub sets: BTreeMap<KbId, ReferenceImageSet>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub scores: BTreeMap<KbId, CrossModalScore>,
    pub warnings: Vec<String>,
}

impl ScoreOutcome {
    /// True when at least one score was attempted and every one of them
    /// failed at a provider.
    pub fn all_provider_failures(&self) -> bool {
        !self.scores.is_empty() && self.scores.values().all(|s| s.absence == Some(Absence::ProviderFailure))
    }
}

type QueryResult = Result<Vec<EmbeddingVector>, (Absence, String)>;

/// Document-image vectors, computed at most once per modality.
pub struct QueryFeatures<'a> {
    image: Option<&'a [u8]>,
    providers: &'a Providers,
    per_modality: [OnceLock<QueryResult>; 3],
}

impl<'a> QueryFeatures<'a> {
    pub fn new(image: Option<&'a [u8]>, providers: &'a Providers) -> Self {
        QueryFeatures { image: image.filter(|i| !i.is_empty()), providers, per_modality: Default::default() }
    }

    pub fn vectors(&self, modality: Modality) -> Result<&[EmbeddingVector], (Absence, String)> {
        let slot = &self.per_modality[modality as usize];
        slot.get_or_init(|| self.compute(modality)).as_deref().map_err(Clone::clone)
    }

    fn compute(&self, modality: Modality) -> QueryResult {
        let Some(image) = self.image else {
            return Err((Absence::NoQueryImage, "no query image".into()));
        };
        let failure = |e: FeatureError| {
            let absence = if matches!(e, FeatureError::Format(_)) { Absence::NoQueryImage } else { Absence::ProviderFailure };
            (absence, format!("query image ({modality}): {e}"))
        };
        if modality != Modality::Face {
            return self.providers.embed(image, modality, None).map(|v| vec![v]).map_err(failure);
        }
        let faces = self.providers.detect_faces(image).map_err(failure)?;
        if faces.is_empty() {
            return Err((Absence::NoFacesInQuery, "no faces in query image".into()));
        }
        faces.iter().map(|f| self.providers.embed(image, Modality::Face, Some(f.bbox))).collect::<Result<_, _>>().map_err(failure)
    }
}

/// Builds the entity's profile from `references` and compares it with the
/// query vectors. Failures become an absent score plus warnings.
pub fn score_entity(
    providers: &Providers,
    cluster: &ClusterConfig,
    kb_id: &KbId,
    entity_type: EntityType,
    references: Option<&ReferenceImageSet>,
    query: &QueryFeatures<'_>,
) -> (CrossModalScore, Vec<String>) {
    let kind = ScoreKind::for_type(entity_type);
    let modality = Modality::for_entity(entity_type);
    let mut warnings = Vec::new();
    let query_vectors = match query.vectors(modality) {
        Ok(v) => v,
        Err((absence, msg)) => {
            warnings.push(format!("{kb_id}: {msg}"));
            return (CrossModalScore::absent(kb_id.clone(), kind, absence), warnings);
        }
    };
    let Some(refs) = references.filter(|r| !r.is_empty()) else {
        warnings.push(format!("{kb_id}: no evidence"));
        return (CrossModalScore::absent(kb_id.clone(), kind, Absence::NoEvidence), warnings);
    };
    let profile = match modality {
        Modality::Face => build_person_profile(refs, providers, cluster),
        m => build_place_or_event_profile(refs, m, providers),
    };
    let outcome = match profile {
        Ok(o) => o,
        Err(e) => {
            warnings.push(format!("{kb_id}: {e}"));
            return (CrossModalScore::absent(kb_id.clone(), kind, Absence::ProviderFailure), warnings);
        }
    };
    warnings.extend(outcome.warnings.iter().map(|w| format!("{kb_id}: {w}")));
    match entity_similarity(kb_id, query_vectors, outcome.profile.as_ref(), kind) {
        Ok(score) => (score, warnings),
        Err(e) => {
            warnings.push(format!("{kb_id}: {e}"));
            (CrossModalScore::absent(kb_id.clone(), kind, Absence::ProviderFailure), warnings)
        }
    }
}

/// The full pipeline: link, crawl, profile and score.
pub struct Engine {
    linker: Linker,
    evidence: Arc<EvidenceStore>,
    providers: Providers,
    config: EngineConfig,
}

impl Engine {
    pub fn new(linker: Linker, evidence: Arc<EvidenceStore>, providers: Providers, config: EngineConfig) -> Self {
        Engine { linker, evidence, providers, config }
    }

    pub fn linker(&self) -> &Linker {
        &self.linker
    }

    pub fn evidence(&self) -> &Arc<EvidenceStore> {
        &self.evidence
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Links `text`; empty text links to nothing.
    pub fn link(&self, text: &str, language: Language) -> Result<LinkingOutcome, LinkError> {
        if text.trim().is_empty() {
            return Ok(LinkingOutcome::default());
        }
        self.linker.link_document(text, language)
    }

    /// Crawls reference sets for the entities of the requested types.
    /// `progress` receives the completed fraction after every entity.
    pub fn crawl(&self, entities: &[LinkedEntity], types: &BTreeSet<EntityType>, progress: &(dyn Fn(f64) + Sync)) -> CrawlOutcome {
        let todo: Vec<&LinkedEntity> = entities.iter().filter(|e| types.contains(&e.entity_type)).collect();
        let done = AtomicUsize::new(0);
        let results = crate::par::map_bounded(&todo, self.config.parallelism, |_, e| {
            let r = self.evidence.get_reference_set(e, self.config.k);
            progress((done.fetch_add(1, Ordering::SeqCst) + 1) as f64 / todo.len() as f64);
            r
        });
        let mut out = CrawlOutcome::default();
        for (e, r) in todo.iter().zip(results) {
            match r {
                Ok(set) => {
                    out.warnings.extend(set.warnings.iter().map(|w| format!("{}: {w}", e.kb_id)));
                    out.sets.insert(e.kb_id.clone(), set);
                }
                Err(err) => out.warnings.push(format!("{}: evidence search failed: {err}", e.kb_id)),
            }
        }
        progress(1.0);
        out
    }

    /// Scores one entity against a reference set.
    pub fn score_entity(
        &self,
        kb_id: &KbId,
        entity_type: EntityType,
        references: Option<&ReferenceImageSet>,
        query: &QueryFeatures<'_>,
    ) -> (CrossModalScore, Vec<String>) {
        score_entity(&self.providers, &self.config.cluster, kb_id, entity_type, references, query)
    }

    /// Scores every entity of the requested types.
    pub fn score(
        &self,
        image: Option<&[u8]>,
        entities: &[LinkedEntity],
        crawl: &CrawlOutcome,
        types: &BTreeSet<EntityType>,
        progress: &(dyn Fn(f64) + Sync),
    ) -> ScoreOutcome {
        let query = QueryFeatures::new(image, &self.providers);
        let todo: Vec<&LinkedEntity> = entities.iter().filter(|e| types.contains(&e.entity_type)).collect();
        let done = AtomicUsize::new(0);
        let results = crate::par::map_bounded(&todo, self.config.parallelism, |_, e| {
            let r = self.score_entity(&e.kb_id, e.entity_type, crawl.sets.get(&e.kb_id), &query);
            progress((done.fetch_add(1, Ordering::SeqCst) + 1) as f64 / todo.len() as f64);
            r
        });
        let mut out = ScoreOutcome::default();
        for (score, warnings) in results {
            out.warnings.extend(warnings);
            out.scores.insert(score.kb_id.clone(), score);
        }
        progress(1.0);
        out
    }

    /// Runs the whole pipeline for one document.
    pub fn score_document(&self, document_id: &str, text: &str, image: Option<&[u8]>, options: &AnalyzeOptions) -> Result<DocumentReport, EngineError> {
        if text.trim().is_empty() && image.is_none_or(|i| i.is_empty()) {
            return Err(EngineError::InvalidInput("text and image are both empty".into()));
        }
        let linked = self.link(text, options.language)?;
        let crawl = self.crawl(&linked.entities, &options.types, &|_| {});
        let scored = self.score(image, &linked.entities, &crawl, &options.types, &|_| {});
        Ok(assemble(document_id, linked, crawl, scored))
    }

    /// Resolves a single claimed entity (id or label) and scores it.
    pub fn verify_claim(&self, document_id: &str, claim: &str, image: Option<&[u8]>, language: Language) -> Result<DocumentReport, EngineError> {
        let entity = self.linker.resolve_claim(claim, language)?;
        let types = BTreeSet::from([entity.entity_type]);
        let linked = LinkingOutcome { entities: vec![entity], warnings: Vec::new() };
        let crawl = self.crawl(&linked.entities, &types, &|_| {});
        let scored = self.score(image, &linked.entities, &crawl, &types, &|_| {});
        Ok(assemble(document_id, linked, crawl, scored))
    }
}

/// Combines the stage outputs into a report.
pub(crate) fn assemble(document_id: &str, linked: LinkingOutcome, crawl: CrawlOutcome, scored: ScoreOutcome) -> DocumentReport {
    let mut warnings = linked.warnings;
    warnings.extend(crawl.warnings);
    warnings.extend(scored.warnings);
    DocumentReport {
        report_version: REPORT_VERSION,
        document_id: document_id.to_string(),
        entities: linked.entities,
        scores: scored.scores,
        warnings,
    }
}

impl DocumentReport {
    /// Builds a report from separately executed stages.
    pub fn from_stages(document_id: &str, linked: LinkingOutcome, crawl: CrawlOutcome, scored: ScoreOutcome) -> Self {
        assemble(document_id, linked, crawl, scored)
    }
}
