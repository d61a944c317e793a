//! Cross-modal entity consistency.
//!
//! Given a document (text plus image), this crate links the persons,
//! locations and events mentioned in the text to knowledge-base records,
//! crawls reference images for each of them, embeds document and reference
//! images with modality-specific providers and reports, per entity, the
//! maximum cosine similarity between the two sides.
//!
//! The modules follow the pipeline:
//!
//! * [`entity`]: recognition, disambiguation and typing of mentions,
//! * [`evidence`]: reference image search, fetching and caching,
//! * [`features`]: embedding providers and face-cluster aggregation,
//! * [`scoring`]: similarity scores and document reports,
//! * [`eval`]: tampering-based evaluation with verification accuracy and
//!   ROC AUC.

pub mod bundle;
pub mod cache;
pub mod clock;
pub mod entity;
pub mod eval;
pub mod evidence;
pub mod features;
pub mod geo;
mod http;
mod par;
pub mod scoring;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/linking.md")]
    mod linking {}
    #[doc = include_str!("../../../book/src/evidence.md")]
    mod evidence {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
