use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{auc, report_table, sample_tampered, verification_accuracy, Catalog, CatalogEntity, Dataset, EvalDocument, EvalError, Metrics, ParentClassMode, TamperingStrategy};
use crate::entity::KbId;
use crate::evidence::{ReferenceImage, ReferenceImageSet, DEFAULT_K};
use crate::features::{ClusterConfig, Providers};
use crate::scoring::{score_entity, Absence, QueryFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub seed: u64,
    /// Catalog reference images used per entity.
    pub k: usize,
    pub cluster: ClusterConfig,
    pub parent_class_mode: ParentClassMode,
    /// Documents scored concurrently.
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { seed: 0, k: DEFAULT_K, cluster: ClusterConfig::default(), parent_class_mode: ParentClassMode::Union, parallelism: 4 }
    }
}

/// Scores of one document's original and tampered entity sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPair {
    pub document_id: String,
    pub untampered: f64,
    pub tampered: f64,
    pub originals: Vec<KbId>,
    pub replacements: Vec<KbId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub document_id: String,
    pub reason: String,
}

/// The outcome of one strategy over a dataset. `pairs.len() + excluded`
/// always equals `dataset_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub strategy: String,
    pub seed: u64,
    pub dataset_size: usize,
    pub excluded: usize,
    /// `None` when every document was excluded.
    pub metrics: Option<Metrics>,
    pub options: EvalOptions,
    pub pairs: Vec<RunPair>,
    pub exclusions: Vec<Exclusion>,
}

/// The generator used to sample the confounder for `kb_id` in `document_id`.
/// Seeding per (document, entity) makes each draw independent of scheduling.
pub fn document_rng(seed: u64, document_id: &str, kb_id: &KbId) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(document_id.as_bytes());
    h.update([0]);
    h.update(kb_id.as_str().as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn load_references(entity: &CatalogEntity, k: usize) -> Result<ReferenceImageSet, EvalError> {
    let mut images = Vec::new();
    for path in entity.reference_images.iter().take(k) {
        let content = std::fs::read(path).map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })?;
        let content_type = image::ImageFormat::from_path(path).map_or("application/octet-stream", |f| f.to_mime_type()).to_string();
        images.push(ReferenceImage { source_url: path.display().to_string(), content, content_type, fetched_at: 0 });
    }
    Ok(ReferenceImageSet { kb_id: entity.kb_id.clone(), query: entity.label.clone(), k, images, warnings: Vec::new() })
}

enum DocOutcome {
    Pair(RunPair),
    Excluded(Exclusion),
}

fn replacement<'c>(
    doc: &EvalDocument,
    original: &CatalogEntity,
    strategy: &TamperingStrategy,
    catalog: &'c Catalog,
    options: &EvalOptions,
) -> Result<&'c CatalogEntity, EvalError> {
    let pinned = doc.tampered.get(&strategy.name()).and_then(|m| m.get(&original.kb_id));
    match pinned {
        Some(id) if id == &original.kb_id => Err(EvalError::InvalidReplacement { document: doc.id.clone(), kb_id: id.clone() }),
        Some(id) => catalog.get(id).ok_or_else(|| EvalError::UnknownEntity { document: doc.id.clone(), kb_id: id.clone() }),
        None => {
            let mut rng = document_rng(options.seed, &doc.id, &original.kb_id);
            sample_tampered(original, strategy, catalog, options.parent_class_mode, &mut rng)
        }
    }
}

/// Maximum present score over a set; the first absence when none is present.
fn set_score(
    providers: &Providers,
    options: &EvalOptions,
    entities: &[&CatalogEntity],
    query: &QueryFeatures<'_>,
) -> Result<Result<f64, Absence>, EvalError> {
    let mut best: Option<f64> = None;
    let mut first_absence = None;
    for e in entities {
        let refs = load_references(e, options.k)?;
        let (score, _) = score_entity(providers, &options.cluster, &e.kb_id, e.entity_type, Some(&refs), query);
        match score.value {
            Some(v) => best = Some(best.map_or(v, |b| b.max(v))),
            None => {
                first_absence.get_or_insert(score.absence.unwrap_or(Absence::NoEvidence));
            }
        }
    }
    Ok(best.ok_or(first_absence.unwrap_or(Absence::NoEvidence)))
}

fn evaluate_document(
    doc: &EvalDocument,
    catalog: &Catalog,
    strategy: &TamperingStrategy,
    providers: &Providers,
    options: &EvalOptions,
) -> Result<DocOutcome, EvalError> {
    let entity_type = strategy.entity_type();
    let ids = doc.entities.of_type(entity_type);
    let excluded = |reason: String| Ok(DocOutcome::Excluded(Exclusion { document_id: doc.id.clone(), reason }));
    if ids.is_empty() {
        return excluded(format!("no {entity_type} entities"));
    }
    let mut originals = Vec::with_capacity(ids.len());
    let mut replacements = Vec::with_capacity(ids.len());
    for id in ids {
        let original = catalog.get(id).ok_or_else(|| EvalError::UnknownEntity { document: doc.id.clone(), kb_id: id.clone() })?;
        replacements.push(replacement(doc, original, strategy, catalog, options)?);
        originals.push(original);
    }
    let image = std::fs::read(&doc.image).map_err(|e| EvalError::Io { path: doc.image.display().to_string(), source: e })?;
    let query = QueryFeatures::new(Some(&image), providers);
    let untampered = match set_score(providers, options, &originals, &query)? {
        Ok(v) => v,
        Err(a) => return excluded(format!("untampered: {a}")),
    };
    let tampered = match set_score(providers, options, &replacements, &query)? {
        Ok(v) => v,
        Err(a) => return excluded(format!("tampered: {a}")),
    };
    Ok(DocOutcome::Pair(RunPair {
        document_id: doc.id.clone(),
        untampered,
        tampered,
        originals: originals.iter().map(|e| e.kb_id.clone()).collect(),
        replacements: replacements.iter().map(|e| e.kb_id.clone()).collect(),
    }))
}

/// Scores every document of `dataset` untampered and tampered under
/// `strategy`, then computes verification accuracy and AUC over the
/// documents where both sides have a score.
///
/// A document's set score is the maximum over its entities of the
/// strategy's type. Reference images come from the catalog, so runs are
/// hermetic. Any sampling failure aborts the run.
pub fn run_evaluation(
    dataset: &Dataset,
    catalog: &Catalog,
    strategy: &TamperingStrategy,
    providers: &Providers,
    options: &EvalOptions,
) -> Result<EvaluationRun, EvalError> {
    let mut docs: Vec<&EvalDocument> = dataset.documents.iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let outcomes = crate::par::map_bounded(&docs, options.parallelism, |_, d| evaluate_document(d, catalog, strategy, providers, options));

    let mut pairs = Vec::new();
    let mut exclusions = Vec::new();
    for outcome in outcomes {
        match outcome? {
            DocOutcome::Pair(p) => pairs.push(p),
            DocOutcome::Excluded(x) => exclusions.push(x),
        }
    }
    let metrics = if pairs.is_empty() {
        None
    } else {
        let scored: Vec<(f64, f64)> = pairs.iter().map(|p| (p.untampered, p.tampered)).collect();
        let u: Vec<f64> = scored.iter().map(|p| p.0).collect();
        let t: Vec<f64> = scored.iter().map(|p| p.1).collect();
        Some(Metrics { verification_accuracy: verification_accuracy(&scored)?, auc: auc(&u, &t)? })
    };
    Ok(EvaluationRun {
        strategy: strategy.name(),
        seed: options.seed,
        dataset_size: dataset.len(),
        excluded: exclusions.len(),
        metrics,
        options: *options,
        pairs,
        exclusions,
    })
}

/// Writes `run.json` and `table.txt` into `dir`.
pub fn write_run(dir: &Path, run: &EvaluationRun) -> Result<(), EvalError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |e| EvalError::Io { path, source: e }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut json = serde_json::to_string_pretty(run).expect("run serializes");
    json.push('\n');
    let run_path = dir.join("run.json");
    std::fs::write(&run_path, json).map_err(io(&run_path))?;
    let table_path = dir.join("table.txt");
    std::fs::write(&table_path, report_table(std::slice::from_ref(run))).map_err(io(&table_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rng_depends_on_every_input() {
        let id = KbId::new("Q1").unwrap();
        let draw = |seed, doc: &str, kb: &KbId| document_rng(seed, doc, kb).random::<u64>();
        assert_eq!(draw(1, "d", &id), draw(1, "d", &id));
        assert_ne!(draw(1, "d", &id), draw(2, "d", &id));
        assert_ne!(draw(1, "d", &id), draw(1, "e", &id));
        assert_ne!(draw(1, "d", &id), draw(1, "d", &KbId::new("Q2").unwrap()));
    }
}
