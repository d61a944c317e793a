use serde::{Deserialize, Serialize};

use super::{cluster_majority_mean, ClusterConfig, EmbeddingVector, FeatureError, Modality, Providers};
use crate::entity::KbId;
use crate::evidence::ReferenceImageSet;

/// Reference-side vectors for one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityVisualProfile {
    pub kb_id: KbId,
    pub modality: Modality,
    /// Persons: the majority-cluster mean. Locations and events: one vector
    /// per decodable reference image.
    pub vectors: Vec<EmbeddingVector>,
    /// `sources[i]` lists the reference-image indices behind `vectors[i]`.
    pub sources: Vec<Vec<usize>>,
}

/// A profile, or `None` when the references held no usable evidence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileOutcome {
    pub profile: Option<EntityVisualProfile>,
    pub warnings: Vec<String>,
}

/// Per-image failures that only cost that image.
fn skippable(e: &FeatureError) -> bool {
    matches!(e, FeatureError::Format(_) | FeatureError::FixtureMissing { .. })
}

/// Detects and embeds every face in every reference image, clusters all
/// face vectors jointly and keeps the majority-cluster mean.
pub fn build_person_profile(refset: &ReferenceImageSet, providers: &Providers, config: &ClusterConfig) -> Result<ProfileOutcome, FeatureError> {
    let mut warnings = Vec::new();
    let mut vectors = Vec::new();
    let mut origin = Vec::new();
    for (i, img) in refset.images.iter().enumerate() {
        let faces = match providers.detect_faces(&img.content) {
            Ok(f) => f,
            Err(e) if skippable(&e) => {
                warnings.push(format!("reference {i} ({}): {e}", img.source_url));
                continue;
            }
            Err(e) => return Err(e),
        };
        for face in faces {
            match providers.embed(&img.content, Modality::Face, Some(face.bbox)) {
                Ok(v) => {
                    vectors.push(v);
                    origin.push(i);
                }
                Err(e) if skippable(&e) => warnings.push(format!("reference {i} face {:?}: {e}", face.bbox)),
                Err(e) => return Err(e),
            }
        }
    }
    if vectors.is_empty() {
        warnings.push("no faces in reference images".into());
        return Ok(ProfileOutcome { profile: None, warnings });
    }
    let majority = cluster_majority_mean(&vectors, config)?;
    let mut sources: Vec<usize> = majority.members.iter().map(|&m| origin[m]).collect();
    sources.dedup();
    Ok(ProfileOutcome {
        profile: Some(EntityVisualProfile { kb_id: refset.kb_id.clone(), modality: Modality::Face, vectors: vec![majority.mean], sources: vec![sources] }),
        warnings,
    })
}

/// One whole-image vector per decodable reference image.
pub fn build_place_or_event_profile(refset: &ReferenceImageSet, modality: Modality, providers: &Providers) -> Result<ProfileOutcome, FeatureError> {
    if modality == Modality::Face {
        return Err(FeatureError::Configuration("face profiles are built by build_person_profile".into()));
    }
    let mut warnings = Vec::new();
    let mut vectors = Vec::new();
    let mut sources = Vec::new();
    for (i, img) in refset.images.iter().enumerate() {
        match providers.embed(&img.content, modality, None) {
            Ok(v) => {
                vectors.push(v);
                sources.push(vec![i]);
            }
            Err(e) if skippable(&e) => warnings.push(format!("reference {i} ({}): {e}", img.source_url)),
            Err(e) => return Err(e),
        }
    }
    if vectors.is_empty() {
        warnings.push("no decodable reference images".into());
        return Ok(ProfileOutcome { profile: None, warnings });
    }
    Ok(ProfileOutcome { profile: Some(EntityVisualProfile { kb_id: refset.kb_id.clone(), modality, vectors, sources }), warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::ReferenceImage;
    use crate::features::{image_id, BoundingBox, FaceDetection, FixtureTable};
    use std::io::Cursor;

    fn png(shade: u8) -> Vec<u8> {
        let img = image::RgbImage::from_pixel(64, 64, image::Rgb([shade, 1, 2]));
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
        out
    }

    fn refset(images: Vec<Vec<u8>>) -> ReferenceImageSet {
        ReferenceImageSet {
            kb_id: KbId::new("Q1").unwrap(),
            query: "x".into(),
            k: 5,
            images: images
                .into_iter()
                .enumerate()
                .map(|(i, content)| ReferenceImage { source_url: format!("file:///{i}"), content, content_type: "image/png".into(), fetched_at: 0 })
                .collect(),
            warnings: vec![],
        }
    }

    fn face(t: &mut FixtureTable, img: &[u8], n: u32, v: Vec<f64>) {
        let id = image_id(img);
        t.insert_face(&id, FaceDetection { bbox: BoundingBox { x: n, y: 0, w: 10, h: 10 }, confidence: 0.9 });
        t.insert_vector(Modality::Face, &format!("{id}#{n}"), v).unwrap();
    }

    #[test]
    fn bystander_is_excluded() {
        let mut t = FixtureTable::new();
        let imgs: Vec<Vec<u8>> = (0..5).map(png).collect();
        for (i, img) in imgs.iter().take(4).enumerate() {
            face(&mut t, img, 0, vec![1.0, 0.01 * i as f64, 0.0]);
        }
        face(&mut t, &imgs[4], 0, vec![0.0, 0.0, 1.0]);
        let out = build_person_profile(&refset(imgs), &t.into_providers(), &ClusterConfig::default()).unwrap();
        let p = out.profile.unwrap();
        assert_eq!(p.vectors.len(), 1);
        assert_eq!(p.sources, vec![vec![0, 1, 2, 3]]);
        assert!(p.vectors[0].values()[2].abs() < 1e-12);
    }

    #[test]
    fn no_faces_is_no_evidence() {
        let out = build_person_profile(&refset(vec![png(1)]), &FixtureTable::new().into_providers(), &ClusterConfig::default()).unwrap();
        assert!(out.profile.is_none());
    }

    #[test]
    fn corrupt_references_are_skipped() {
        let mut t = FixtureTable::new();
        let a = png(1);
        t.insert_vector(Modality::Location, &image_id(&a), vec![1.0, 0.0]).unwrap();
        let out = build_place_or_event_profile(&refset(vec![a, b"broken".to_vec()]), Modality::Location, &t.into_providers()).unwrap();
        let p = out.profile.unwrap();
        assert_eq!(p.vectors.len(), 1);
        assert_eq!(out.warnings.len(), 1);
        let empty = build_place_or_event_profile(&refset(vec![]), Modality::Event, &Providers::hash_mock(4)).unwrap();
        assert!(empty.profile.is_none());
    }

    #[test]
    fn three_references_three_vectors() {
        let p = build_place_or_event_profile(&refset(vec![png(1), png(2), png(3)]), Modality::Event, &Providers::hash_mock(8)).unwrap();
        assert_eq!(p.profile.unwrap().vectors.len(), 3);
    }
}
