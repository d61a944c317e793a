//! Embedding providers and aggregation of reference features.
//!
//! Every modality (faces, locations, events) is served by a provider behind
//! the [`Embedder`] trait. Three backends exist: a remote RPC client, a
//! fixture table keyed by image content hash, and a deterministic hash mock.

mod cluster;
mod fixture;
mod hash;
mod profile;
mod provider;
mod remote;
mod vector;

use thiserror::Error;

pub use cluster::{agglomerate, cluster_majority_mean, cosine_distance, mean_intra_distance, ClusterConfig, Linkage, MajorityCluster};
pub use fixture::{FixtureDetector, FixtureEmbedder, FixtureTable, FIXTURE_PROVIDER_ID};
pub use hash::{hash_embed, HASH_MOCK_PROVIDER_ID};
pub use profile::{build_person_profile, build_place_or_event_profile, EntityVisualProfile, ProfileOutcome};
pub use provider::{
    image_dimensions, image_id, Backend, BoundingBox, Embedder, FaceDetection, FaceDetector, HashMockDetector,
    HashMockEmbedder, Modality, ProviderDescriptor, Providers,
};
pub use remote::{proto, RemoteProvider, RemoteSettings, CONTRACT_VERSION};
pub use vector::{EmbeddingVector, NORM_TOLERANCE};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no input vectors")]
    EmptyInput,
    #[error("invalid embedding dimension {0}")]
    InvalidDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector norm {0} is not 1")]
    NotNormalized(f64),
    #[error("vector has non-finite components")]
    NonFinite,
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("vectors from different providers: {0} and {1}")]
    MixedProviders(String, String),
    #[error("image format error: {0}")]
    Format(String),
    #[error("provider configuration error: {0}")]
    Configuration(String),
    #[error("no fixture {modality} entry for {key}")]
    FixtureMissing { modality: Modality, key: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("provider error: {message}")]
    Provider { message: String, retryable: bool },
}

impl FeatureError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FeatureError::Provider { retryable: true, .. })
    }
}
