//! Cross-modal similarity scores and document reports.

mod engine;
mod report;
mod similarity;

pub use engine::{score_entity, AnalyzeOptions, CrawlOutcome, Engine, EngineConfig, EngineError, QueryFeatures, ScoreOutcome};
pub use report::{DocumentReport, REPORT_VERSION};
pub use similarity::{cosine, entity_similarity, Absence, CrossModalScore, ScoreKind, ScorePair, BREAKDOWN_CAP};
