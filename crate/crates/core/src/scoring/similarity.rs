use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::entity::{EntityType, KbId};
use crate::features::{EmbeddingVector, EntityVisualProfile, FeatureError};

/// Pairs kept in a score breakdown, largest similarities first.
pub const BREAKDOWN_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    #[serde(rename = "CMPS")]
    Cmps,
    #[serde(rename = "CMLS")]
    Cmls,
    #[serde(rename = "CMES")]
    Cmes,
}

impl ScoreKind {
    pub fn for_type(t: EntityType) -> ScoreKind {
        match t {
            EntityType::Person => ScoreKind::Cmps,
            EntityType::Location => ScoreKind::Cmls,
            EntityType::Event => ScoreKind::Cmes,
        }
    }

    pub fn entity_type(&self) -> EntityType {
        match self {
            ScoreKind::Cmps => EntityType::Person,
            ScoreKind::Cmls => EntityType::Location,
            ScoreKind::Cmes => EntityType::Event,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreKind::Cmps => "CMPS",
            ScoreKind::Cmls => "CMLS",
            ScoreKind::Cmes => "CMES",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a score has no value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Absence {
    NoQueryImage,
    NoFacesInQuery,
    NoEvidence,
    ProviderFailure,
}

impl fmt::Display for Absence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Absence::NoQueryImage => "no query image",
            Absence::NoFacesInQuery => "no faces in query image",
            Absence::NoEvidence => "no evidence",
            Absence::ProviderFailure => "provider failure",
        })
    }
}

/// One compared pair: `reference` indexes the profile vectors, `query` the
/// document-image vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub reference: usize,
    pub query: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModalScore {
    pub kb_id: KbId,
    pub kind: ScoreKind,
    /// Maximum similarity over the breakdown; `None` together with `absence`.
    pub value: Option<f64>,
    /// Reference images that contributed profile vectors.
    pub evidence_count: usize,
    pub breakdown: Vec<ScorePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absence: Option<Absence>,
}

impl CrossModalScore {
    pub fn absent(kb_id: KbId, kind: ScoreKind, absence: Absence) -> Self {
        CrossModalScore { kb_id, kind, value: None, evidence_count: 0, breakdown: Vec::new(), absence: Some(absence) }
    }
}

/// Cosine similarity of unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, FeatureError> {
    Ok(a.dot(b)?.clamp(-1.0, 1.0))
}

/// Maximum similarity between any query vector and any profile vector.
/// A missing or empty profile yields a [`Absence::NoEvidence`] score.
///
/// ```
/// use xmc_core::entity::KbId;
/// use xmc_core::features::{EmbeddingVector, EntityVisualProfile, Modality};
/// use xmc_core::scoring::{entity_similarity, ScoreKind};
///
/// let v = |x: f64, y: f64| EmbeddingVector::normalized(vec![x, y], "demo").unwrap();
/// let kb_id = KbId::new("Q64").unwrap();
/// let profile = EntityVisualProfile {
///     kb_id: kb_id.clone(),
///     modality: Modality::Location,
///     vectors: vec![v(1.0, 0.0), v(0.0, 1.0)],
///     sources: vec![vec![0], vec![1]],
/// };
/// let score = entity_similarity(&kb_id, &[v(0.6, 0.8)], Some(&profile), ScoreKind::Cmls).unwrap();
/// assert!((score.value.unwrap() - 0.8).abs() < 1e-12);
/// ```
pub fn entity_similarity(
    kb_id: &KbId,
    query: &[EmbeddingVector],
    profile: Option<&EntityVisualProfile>,
    kind: ScoreKind,
) -> Result<CrossModalScore, FeatureError> {
    if query.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let Some(profile) = profile.filter(|p| !p.vectors.is_empty()) else {
        return Ok(CrossModalScore::absent(kb_id.clone(), kind, Absence::NoEvidence));
    };
    let mut pairs = Vec::with_capacity(query.len() * profile.vectors.len());
    for (r, pv) in profile.vectors.iter().enumerate() {
        for (q, qv) in query.iter().enumerate() {
            pairs.push(ScorePair { reference: r, query: q, similarity: cosine(pv, qv)? });
        }
    }
    pairs.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.reference.cmp(&b.reference)).then(a.query.cmp(&b.query)));
    pairs.truncate(BREAKDOWN_CAP);
    let evidence: BTreeSet<usize> = profile.sources.iter().flatten().copied().collect();
    Ok(CrossModalScore {
        kb_id: kb_id.clone(),
        kind,
        value: Some(pairs[0].similarity),
        evidence_count: evidence.len().max(1),
        breakdown: pairs,
        absence: None,
    })
}
