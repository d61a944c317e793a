use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use super::{
    image_dimensions, image_id, Backend, BoundingBox, Embedder, EmbeddingVector, FaceDetection, FaceDetector, FeatureError,
    Modality, ProviderDescriptor, Providers,
};

pub const FIXTURE_PROVIDER_ID: &str = "fixture";

/// Precomputed detections and vectors keyed by image id (see [`image_id`]).
///
/// On disk, a fixture directory holds
///
/// * `faces.tsv`: `id<TAB>x,y,w,h,confidence`, one line per face,
/// * `vectors/{face,location,event}.tsv`: `key<TAB>v1,v2,...,vd`.
///
/// Location and event vectors are keyed by image id; face vectors by
/// `id#n`, where `n` is the face's position among that image's lines in
/// `faces.tsv`. Missing files mean empty tables.
#[derive(Debug, Default, Clone)]
pub struct FixtureTable {
    faces: HashMap<String, Vec<FaceDetection>>,
    vectors: HashMap<Modality, HashMap<String, EmbeddingVector>>,
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> FeatureError {
    FeatureError::Parse { path: source.to_string(), line, message: message.into() }
}

fn parse_numbers(s: &str, source: &str, line: usize) -> Result<Vec<f64>, FeatureError> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| parse_err(source, line, format!("bad number {x:?}: {e}"))))
        .collect()
}

fn lines<'a>(reader: impl BufRead + 'a, source: &'a str) -> impl Iterator<Item = Result<(usize, String, String), FeatureError>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let n = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(parse_err(source, n, e.to_string()))),
        };
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            return None;
        }
        match line.split_once('\t') {
            Some((k, v)) => Some(Ok((n, k.trim().to_string(), v.to_string()))),
            None => Some(Err(parse_err(source, n, "expected key<TAB>values"))),
        }
    })
}

impl FixtureTable {
    pub fn new() -> Self {
        FixtureTable::default()
    }

    pub fn load(dir: &Path) -> Result<Self, FeatureError> {
        let mut table = FixtureTable::new();
        let open = |p: &Path| -> Result<Option<BufReader<File>>, FeatureError> {
            match File::open(p) {
                Ok(f) => Ok(Some(BufReader::new(f))),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(FeatureError::Io { path: p.display().to_string(), source: e }),
            }
        };
        let faces = dir.join("faces.tsv");
        if let Some(r) = open(&faces)? {
            table.read_faces(r, &faces.display().to_string())?;
        }
        for m in [Modality::Face, Modality::Location, Modality::Event] {
            let p = dir.join("vectors").join(format!("{m}.tsv"));
            if let Some(r) = open(&p)? {
                table.read_vectors(m, r, &p.display().to_string())?;
            }
        }
        Ok(table)
    }

    pub fn read_faces(&mut self, reader: impl BufRead, source: &str) -> Result<(), FeatureError> {
        for entry in lines(reader, source) {
            let (n, id, rest) = entry?;
            let v = parse_numbers(&rest, source, n)?;
            if v.len() != 5 {
                return Err(parse_err(source, n, "expected x,y,w,h,confidence"));
            }
            let int = |x: f64| -> Result<u32, FeatureError> {
                if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                    Ok(x as u32)
                } else {
                    Err(parse_err(source, n, format!("bad pixel value {x}")))
                }
            };
            let bbox = BoundingBox { x: int(v[0])?, y: int(v[1])?, w: int(v[2])?, h: int(v[3])? };
            if bbox.w == 0 || bbox.h == 0 || !(0.0..=1.0).contains(&v[4]) {
                return Err(parse_err(source, n, "empty box or confidence outside [0, 1]"));
            }
            self.insert_face(&id, FaceDetection { bbox, confidence: v[4] });
        }
        Ok(())
    }

    pub fn read_vectors(&mut self, modality: Modality, reader: impl BufRead, source: &str) -> Result<(), FeatureError> {
        for entry in lines(reader, source) {
            let (n, key, rest) = entry?;
            let values = parse_numbers(&rest, source, n)?;
            self.insert_vector(modality, &key, values).map_err(|e| parse_err(source, n, e.to_string()))?;
        }
        Ok(())
    }

    pub fn insert_face(&mut self, image_id: &str, face: FaceDetection) {
        self.faces.entry(image_id.to_string()).or_default().push(face);
    }

    /// Stores `values` (normalized) under `key`. All vectors of one modality
    /// must share a dimension.
    pub fn insert_vector(&mut self, modality: Modality, key: &str, values: Vec<f64>) -> Result<(), FeatureError> {
        let v = EmbeddingVector::normalized(values, FIXTURE_PROVIDER_ID)?;
        let table = self.vectors.entry(modality).or_default();
        if let Some(other) = table.values().next() {
            if other.dim() != v.dim() {
                return Err(FeatureError::DimensionMismatch { expected: other.dim(), actual: v.dim() });
            }
        }
        table.insert(key.to_string(), v);
        Ok(())
    }

    pub fn dim(&self, modality: Modality) -> usize {
        self.vectors.get(&modality).and_then(|t| t.values().next()).map_or(0, |v| v.dim())
    }

    /// Detector and embedders backed by this table.
    pub fn into_providers(self) -> Providers {
        let table = Arc::new(self);
        let embedder = |m| Arc::new(FixtureEmbedder::new(table.clone(), m)) as Arc<dyn Embedder>;
        Providers {
            detector: Arc::new(FixtureDetector { table: table.clone() }),
            face: embedder(Modality::Face),
            location: embedder(Modality::Location),
            event: embedder(Modality::Event),
        }
    }
}

pub struct FixtureDetector {
    table: Arc<FixtureTable>,
}

impl FixtureDetector {
    pub fn new(table: Arc<FixtureTable>) -> Self {
        FixtureDetector { table }
    }
}

impl FaceDetector for FixtureDetector {
    fn detect_faces(&self, image: &[u8]) -> Result<Vec<FaceDetection>, FeatureError> {
        let (w, h) = image_dimensions(image)?;
        let mut faces: Vec<FaceDetection> = self
            .table
            .faces
            .get(&image_id(image))
            .map(|f| f.iter().filter(|d| d.bbox.fits(w, h)).copied().collect())
            .unwrap_or_default();
        faces.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(faces)
    }
}

pub struct FixtureEmbedder {
    table: Arc<FixtureTable>,
    descriptor: ProviderDescriptor,
}

impl FixtureEmbedder {
    pub fn new(table: Arc<FixtureTable>, modality: Modality) -> Self {
        let descriptor = ProviderDescriptor {
            provider_id: FIXTURE_PROVIDER_ID.to_string(),
            modality,
            dim: table.dim(modality),
            backend: Backend::Fixture,
        };
        FixtureEmbedder { table, descriptor }
    }
}

impl Embedder for FixtureEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, image: &[u8], bbox: Option<BoundingBox>) -> Result<EmbeddingVector, FeatureError> {
        image_dimensions(image)?;
        let modality = self.descriptor.modality;
        let id = image_id(image);
        let key = match (modality, bbox) {
            (Modality::Face, Some(b)) => {
                let n = self
                    .table
                    .faces
                    .get(&id)
                    .and_then(|faces| faces.iter().position(|f| f.bbox == b))
                    .ok_or_else(|| FeatureError::FixtureMissing { modality, key: format!("{id} at {b:?}") })?;
                format!("{id}#{n}")
            }
            _ => id,
        };
        self.table
            .vectors
            .get(&modality)
            .and_then(|t| t.get(&key))
            .cloned()
            .ok_or(FeatureError::FixtureMissing { modality, key })
    }
}
