use std::fmt;
use std::io::Cursor;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hash_embed, EmbeddingVector, FeatureError};
use crate::entity::EntityType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Location,
    Event,
}

impl Modality {
    pub fn for_entity(t: EntityType) -> Modality {
        match t {
            EntityType::Person => Modality::Face,
            EntityType::Location => Modality::Location,
            EntityType::Event => Modality::Event,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Location => "location",
            Modality::Event => "event",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    /// Non-empty and inside a `width x height` image.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    RemoteRpc,
    Fixture,
    HashMock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub modality: Modality,
    pub dim: usize,
    pub backend: Backend,
}

/// Decoded `(width, height)` of an encoded image.
pub fn image_dimensions(image: &[u8]) -> Result<(u32, u32), FeatureError> {
    image::ImageReader::new(Cursor::new(image))
        .with_guessed_format()
        .map_err(|e| FeatureError::Format(e.to_string()))?
        .into_dimensions()
        .map_err(|e| FeatureError::Format(e.to_string()))
}

/// Content address of an encoded image: lowercase hex SHA-256 of its bytes.
/// Fixture files key their entries by this id.
pub fn image_id(image: &[u8]) -> String {
    hex::encode(Sha256::digest(image))
}

pub trait FaceDetector: Send + Sync {
    /// Detections sorted by descending confidence.
    fn detect_faces(&self, image: &[u8]) -> Result<Vec<FaceDetection>, FeatureError>;
}

pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    /// Embeds the whole image, or the `bbox` crop for faces.
    fn embed(&self, image: &[u8], bbox: Option<BoundingBox>) -> Result<EmbeddingVector, FeatureError>;
}

/// One detector plus one embedder per modality.
#[derive(Clone)]
pub struct Providers {
    pub detector: Arc<dyn FaceDetector>,
    pub face: Arc<dyn Embedder>,
    pub location: Arc<dyn Embedder>,
    pub event: Arc<dyn Embedder>,
}

impl Providers {
    pub fn embedder(&self, modality: Modality) -> &Arc<dyn Embedder> {
        match modality {
            Modality::Face => &self.face,
            Modality::Location => &self.location,
            Modality::Event => &self.event,
        }
    }

    pub fn detect_faces(&self, image: &[u8]) -> Result<Vec<FaceDetection>, FeatureError> {
        let mut faces = self.detector.detect_faces(image)?;
        faces.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(faces)
    }

    /// Embeds with the provider configured for `modality`, checking the
    /// provider's declared modality, dimension and the face/bbox pairing.
    pub fn embed(&self, image: &[u8], modality: Modality, bbox: Option<BoundingBox>) -> Result<EmbeddingVector, FeatureError> {
        let provider = self.embedder(modality);
        let desc = provider.descriptor();
        if desc.modality != modality {
            return Err(FeatureError::Configuration(format!(
                "provider {} serves {} but was asked for {}",
                desc.provider_id, desc.modality, modality
            )));
        }
        if modality == Modality::Face && bbox.is_none() {
            return Err(FeatureError::Configuration("face embedding requires a bounding box".into()));
        }
        let v = provider.embed(image, if modality == Modality::Face { bbox } else { None })?;
        if v.dim() != desc.dim {
            return Err(FeatureError::DimensionMismatch { expected: desc.dim, actual: v.dim() });
        }
        Ok(v)
    }

    /// Every modality backed by the deterministic hash provider.
    pub fn hash_mock(dim: usize) -> Providers {
        Providers {
            detector: Arc::new(HashMockDetector),
            face: Arc::new(HashMockEmbedder::new(Modality::Face, dim)),
            location: Arc::new(HashMockEmbedder::new(Modality::Location, dim)),
            event: Arc::new(HashMockEmbedder::new(Modality::Event, dim)),
        }
    }
}

/// Reports a single full-frame face for every decodable image.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashMockDetector;

impl FaceDetector for HashMockDetector {
    fn detect_faces(&self, image: &[u8]) -> Result<Vec<FaceDetection>, FeatureError> {
        let (w, h) = image_dimensions(image)?;
        if w == 0 || h == 0 {
            return Ok(Vec::new());
        }
        Ok(vec![FaceDetection { bbox: BoundingBox { x: 0, y: 0, w, h }, confidence: 1.0 }])
    }
}

/// Embeds `hash_embed("<modality>:<image id>[:x,y,w,h]")`.
#[derive(Debug, Clone)]
pub struct HashMockEmbedder {
    descriptor: ProviderDescriptor,
}

impl HashMockEmbedder {
    pub fn new(modality: Modality, dim: usize) -> Self {
        HashMockEmbedder {
            descriptor: ProviderDescriptor {
                provider_id: super::HASH_MOCK_PROVIDER_ID.to_string(),
                modality,
                dim,
                backend: Backend::HashMock,
            },
        }
    }
}

impl Embedder for HashMockEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, image: &[u8], bbox: Option<BoundingBox>) -> Result<EmbeddingVector, FeatureError> {
        image_dimensions(image)?;
        let mut key = format!("{}:{}", self.descriptor.modality, image_id(image));
        if let Some(b) = bbox {
            key.push_str(&format!(":{},{},{},{}", b.x, b.y, b.w, b.h));
        }
        hash_embed(&key, self.descriptor.dim)
    }
}
