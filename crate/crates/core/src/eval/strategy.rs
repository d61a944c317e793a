use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, CatalogEntity, EvalError, ParentClassMode};
use crate::entity::EntityType;
use crate::geo::haversine_km;

/// How a confounder for an original entity is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TamperingStrategy {
    RandomPerson,
    /// Person with the same country of citizenship.
    PsC,
    /// Person with the same gender.
    PsG,
    /// Person with the same citizenship and gender.
    PsCG,
    RandomLocation,
    /// Location at a great-circle distance in `[min_km, max_km)`, optionally
    /// of the same location type.
    GcdBand { min_km: f64, max_km: f64, same_type: bool },
    RandomEvent,
    /// Event sharing at least one parent class.
    EsP,
}

impl TamperingStrategy {
    /// Every built-in strategy, in report order.
    pub fn table() -> Vec<TamperingStrategy> {
        use TamperingStrategy::*;
        vec![
            RandomPerson,
            PsC,
            PsG,
            PsCG,
            RandomLocation,
            GcdBand { min_km: 25.0, max_km: 200.0, same_type: true },
            GcdBand { min_km: 200.0, max_km: 750.0, same_type: true },
            GcdBand { min_km: 750.0, max_km: 2500.0, same_type: true },
            RandomEvent,
            EsP,
        ]
    }

    pub fn entity_type(&self) -> EntityType {
        use TamperingStrategy::*;
        match self {
            RandomPerson | PsC | PsG | PsCG => EntityType::Person,
            RandomLocation | GcdBand { .. } => EntityType::Location,
            RandomEvent | EsP => EntityType::Event,
        }
    }

    pub fn name(&self) -> String {
        use TamperingStrategy::*;
        match self {
            RandomPerson => "random-person".into(),
            PsC => "psc".into(),
            PsG => "psg".into(),
            PsCG => "pscg".into(),
            RandomLocation => "random-location".into(),
            GcdBand { min_km, max_km, same_type } => {
                format!("gcd-{min_km}-{max_km}{}", if *same_type { "" } else { "-anytype" })
            }
            RandomEvent => "random-event".into(),
            EsP => "esp".into(),
        }
    }

    /// Human-readable form of the constraint a confounder must meet.
    pub fn constraint(&self) -> String {
        use TamperingStrategy::*;
        match self {
            RandomPerson => "of type person".into(),
            PsC => "of type person with the same country of citizenship".into(),
            PsG => "of type person with the same gender".into(),
            PsCG => "of type person with the same country of citizenship and gender".into(),
            RandomLocation => "of type location".into(),
            GcdBand { min_km, max_km, same_type } => format!(
                "of type location{} at {min_km} to {max_km} km",
                if *same_type { " with the same location type" } else { "" }
            ),
            RandomEvent => "of type event".into(),
            EsP => "of type event sharing a parent class".into(),
        }
    }

    /// Whether `candidate` may replace `original`.
    pub fn admits(&self, original: &CatalogEntity, candidate: &CatalogEntity, mode: ParentClassMode) -> bool {
        use TamperingStrategy::*;
        if candidate.kb_id == original.kb_id || candidate.entity_type != self.entity_type() {
            return false;
        }
        let same = |a: &Option<_>, b: &Option<_>| a.is_some() && a == b;
        match self {
            RandomPerson | RandomLocation | RandomEvent => true,
            PsC => same(&original.country_of_citizenship, &candidate.country_of_citizenship),
            PsG => same(&original.gender, &candidate.gender),
            PsCG => {
                same(&original.country_of_citizenship, &candidate.country_of_citizenship) && same(&original.gender, &candidate.gender)
            }
            GcdBand { min_km, max_km, same_type } => {
                let (Some(a), Some(b)) = (original.coordinate, candidate.coordinate) else {
                    return false;
                };
                let d = haversine_km(a, b);
                (!*same_type || same(&original.location_type, &candidate.location_type)) && d >= *min_km && d < *max_km
            }
            EsP => {
                let mine = original.parents(mode);
                candidate.parents(mode).iter().any(|p| mine.contains(p))
            }
        }
    }
}

impl fmt::Display for TamperingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl From<TamperingStrategy> for String {
    fn from(s: TamperingStrategy) -> Self {
        s.name()
    }
}

impl TryFrom<String> for TamperingStrategy {
    type Error = EvalError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for TamperingStrategy {
    type Err = EvalError;

    /// Table names, plus `gcd-<min>-<max>[-anytype]` for custom bands.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(found) = TamperingStrategy::table().into_iter().find(|t| t.name() == lower) {
            return Ok(found);
        }
        if let Some(rest) = lower.strip_prefix("gcd-") {
            let (rest, same_type) = match rest.strip_suffix("-anytype") {
                Some(r) => (r, false),
                None => (rest, true),
            };
            if let Some((a, b)) = rest.split_once('-') {
                if let (Ok(min_km), Ok(max_km)) = (a.parse::<f64>(), b.parse::<f64>()) {
                    if min_km.is_finite() && max_km.is_finite() && 0.0 <= min_km && min_km < max_km {
                        return Ok(TamperingStrategy::GcdBand { min_km, max_km, same_type });
                    }
                }
            }
        }
        let valid: Vec<String> = TamperingStrategy::table().iter().map(|t| t.name()).collect();
        Err(EvalError::UnknownStrategy { name: s.to_string(), valid: valid.join(", ") })
    }
}

/// Draws a confounder for `original` uniformly among the eligible catalog
/// entities (in kb_id order).
pub fn sample_tampered<'c, R: Rng + ?Sized>(
    original: &CatalogEntity,
    strategy: &TamperingStrategy,
    catalog: &'c Catalog,
    mode: ParentClassMode,
    rng: &mut R,
) -> Result<&'c CatalogEntity, EvalError> {
    let eligible: Vec<&CatalogEntity> = catalog.entities().iter().filter(|c| strategy.admits(original, c, mode)).collect();
    if eligible.is_empty() {
        return Err(EvalError::SamplingExhausted {
            strategy: strategy.name(),
            kb_id: original.kb_id.clone(),
            constraint: strategy.constraint(),
        });
    }
    Ok(eligible[rng.random_range(0..eligible.len())])
}
