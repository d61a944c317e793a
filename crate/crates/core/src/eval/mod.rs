//! Tampering-based evaluation.
//!
//! Every document's entities of one type are replaced by confounders drawn
//! from a catalog under a [`TamperingStrategy`]. Both the original and the
//! tampered entity sets are scored against the document image; verification
//! accuracy and ROC AUC summarize how well the scores tell them apart.

mod catalog;
mod dataset;
mod metrics;
mod run;
mod strategy;
mod table;

use thiserror::Error;

pub use catalog::{Catalog, CatalogEntity, ParentClassMode};
pub use dataset::{Dataset, EntitySets, EvalDocument};
pub use metrics::{auc, verification_accuracy, Metrics};
pub use run::{document_rng, run_evaluation, write_run, EvalOptions, EvaluationRun, Exclusion, RunPair};
pub use strategy::{sample_tampered, TamperingStrategy};
pub use table::{format_fixed2, report_table};

use crate::entity::KbId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("unknown strategy {name:?}; valid strategies: {valid}")]
    UnknownStrategy { name: String, valid: String },
    #[error("document {document}: entity {kb_id} is not in the catalog")]
    UnknownEntity { document: String, kb_id: KbId },
    #[error("sampling exhausted for {kb_id} under {strategy}: no catalog entity {constraint}")]
    SamplingExhausted { strategy: String, kb_id: KbId, constraint: String },
    #[error("empty score list")]
    EmptyScores,
    #[error("document {document}: tampered id {kb_id} equals the original")]
    InvalidReplacement { document: String, kb_id: KbId },
}
