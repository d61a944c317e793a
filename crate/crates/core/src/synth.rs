//! Writers for synthetic fixture bundles and evaluation sets.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::entity::{EntityType, KbId, KbRecord};
use crate::eval::{CatalogEntity, EntitySets, EvalDocument};
use crate::features::{image_id, BoundingBox, Modality};

/// A distinct 64x64 PNG for every seed.
pub fn png(seed: u64) -> Vec<u8> {
    let h = Sha256::digest(seed.to_be_bytes());
    let mut img = image::RgbImage::from_pixel(64, 64, image::Rgb([h[0], h[1], h[2]]));
    img.put_pixel((seed % 64) as u32, ((seed / 64) % 64) as u32, image::Rgb([h[3], h[4], h[5]]));
    for (i, b) in seed.to_be_bytes().iter().enumerate() {
        img.put_pixel(i as u32, 63, image::Rgb([*b, 255 - *b, 0]));
    }
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).expect("png encodes");
    out
}

/// `dim`-dimensional unit basis vector `e_i`.
pub fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// The full-frame box of a [`png`] image.
pub const FULL_FRAME: BoundingBox = BoundingBox { x: 0, y: 0, w: 64, h: 64 };

/// Accumulates a fixture bundle (see [`crate::bundle`]) and writes it out.
pub struct BundleWriter {
    root: PathBuf,
    gazetteer: String,
    kb: String,
    events: String,
    faces: String,
    vectors: BTreeMap<Modality, String>,
    face_counts: HashMap<String, usize>,
    image_counts: HashMap<KbId, usize>,
}

impl BundleWriter {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        BundleWriter {
            root: root.into(),
            gazetteer: String::new(),
            kb: String::new(),
            events: String::new(),
            faces: String::new(),
            vectors: BTreeMap::new(),
            face_counts: HashMap::new(),
            image_counts: HashMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Adds a KB record recognized under each of `surfaces`.
    pub fn entity(&mut self, record: &KbRecord, surfaces: &[&str]) -> &mut Self {
        self.kb.push_str(&serde_json::to_string(record).expect("record serializes"));
        self.kb.push('\n');
        for s in surfaces {
            self.gazetteer.push_str(&format!("{s}\t{}\n", record.kb_id));
        }
        self
    }

    pub fn event(&mut self, kb_id: &KbId) -> &mut Self {
        self.events.push_str(&format!("{kb_id}\n"));
        self
    }

    /// Stores `bytes` as the entity's next reference image and returns its
    /// path.
    pub fn reference_image(&mut self, kb_id: &KbId, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let n = self.image_counts.entry(kb_id.clone()).or_default();
        let dir = self.root.join("images").join(kb_id.as_str());
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{n:02}.png"));
        *n += 1;
        std::fs::write(&path, bytes)?;
        Ok(path)
    }

    /// Annotates a face on `image`, with the vector the fixture backend
    /// returns for it.
    pub fn face(&mut self, image: &[u8], bbox: BoundingBox, confidence: f64, vector: &[f64]) -> &mut Self {
        let id = image_id(image);
        let n = self.face_counts.entry(id.clone()).or_default();
        self.faces.push_str(&format!("{id}\t{},{},{},{},{confidence}\n", bbox.x, bbox.y, bbox.w, bbox.h));
        let key = format!("{id}#{n}");
        *n += 1;
        self.push_vector(Modality::Face, &key, vector);
        self
    }

    /// The whole-image vector of `image` for a location or event model.
    pub fn vector(&mut self, modality: Modality, image: &[u8], vector: &[f64]) -> &mut Self {
        self.push_vector(modality, &image_id(image), vector);
        self
    }

    fn push_vector(&mut self, modality: Modality, key: &str, vector: &[f64]) {
        let values: Vec<String> = vector.iter().map(|v| v.to_string()).collect();
        self.vectors.entry(modality).or_default().push_str(&format!("{key}\t{}\n", values.join(",")));
    }

    pub fn finish(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(self.root.join("vectors"))?;
        std::fs::create_dir_all(self.root.join("images"))?;
        std::fs::write(self.root.join("gazetteer.tsv"), &self.gazetteer)?;
        std::fs::write(self.root.join("kb.jsonl"), &self.kb)?;
        std::fs::write(self.root.join("events.txt"), &self.events)?;
        std::fs::write(self.root.join("faces.tsv"), &self.faces)?;
        for (m, text) in &self.vectors {
            std::fs::write(self.root.join("vectors").join(format!("{m}.tsv")), text)?;
        }
        Ok(())
    }
}

/// Paths of a written evaluation set.
#[derive(Debug, Clone)]
pub struct EvalWorld {
    pub dataset: PathBuf,
    pub catalog: PathBuf,
    /// Fixture bundle whose `faces.tsv` and `vectors/` back the fixture
    /// provider.
    pub fixtures: PathBuf,
}

/// Writes `docs` person documents under `root`.
///
/// Person `i` has three reference images whose single face embeds to `e_i`.
/// Document `i` mentions person `i` and pins its random-person replacement
/// to person `i + 1`. Its image shows one face embedding to `e_i`, or to
/// `e_{i+1}` when `inverted`, so untampered scores are 1 and tampered 0, or
/// the reverse. The last `faceless` documents show no face at all.
pub fn write_person_eval_world(root: &Path, docs: usize, faceless: usize, inverted: bool) -> std::io::Result<EvalWorld> {
    assert!(docs >= 2 && faceless <= docs);
    let dim = docs.max(2);
    let fixtures = root.join("fixtures");
    let mut bundle = BundleWriter::new(&fixtures);
    let mut catalog = String::new();
    let mut dataset = String::new();
    let id = |i: usize| KbId::new(format!("Q{}", 1000 + i)).expect("valid id");
    for i in 0..docs {
        let kb = id(i);
        let mut entity = CatalogEntity::new(kb.clone(), EntityType::Person, format!("Person {i}"));
        for r in 0..3u64 {
            let img = png(10_000 + (i as u64) * 10 + r);
            let path = bundle.reference_image(&kb, &img)?;
            bundle.face(&img, FULL_FRAME, 0.99, &basis(dim, i));
            entity.reference_images.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
        catalog.push_str(&serde_json::to_string(&entity).expect("serializes"));
        catalog.push('\n');
    }
    std::fs::create_dir_all(root.join("docs"))?;
    for i in 0..docs {
        let img = png(20_000 + i as u64);
        let rel = PathBuf::from("docs").join(format!("doc{i:02}.png"));
        std::fs::write(root.join(&rel), &img)?;
        if i < docs - faceless {
            let target = if inverted { (i + 1) % docs } else { i };
            bundle.face(&img, FULL_FRAME, 0.98, &basis(dim, target));
        }
        let doc = EvalDocument {
            id: format!("doc{i:02}"),
            text: format!("Person {i} spoke today."),
            image: rel,
            entities: EntitySets { persons: vec![id(i)], ..Default::default() },
            tampered: BTreeMap::from([("random-person".to_string(), BTreeMap::from([(id(i), id((i + 1) % docs))]))]),
        };
        dataset.push_str(&serde_json::to_string(&doc).expect("serializes"));
        dataset.push('\n');
    }
    bundle.finish()?;
    let world = EvalWorld { dataset: root.join("dataset.jsonl"), catalog: root.join("catalog.jsonl"), fixtures };
    std::fs::write(&world.dataset, dataset)?;
    std::fs::write(&world.catalog, catalog)?;
    Ok(world)
}

/// A written demo bundle and the document that goes with it.
#[derive(Debug, Clone)]
pub struct DemoDocument {
    pub bundle: PathBuf,
    pub text: String,
    pub image: Vec<u8>,
    pub person: KbId,
    pub location: KbId,
    pub event: KbId,
}

/// Writes a bundle with one person, one location and one event, laid out
/// for the hash-mock backend.
///
/// The person's references are two copies of the document image plus one
/// other picture, so the majority face cluster is the document face. The
/// location's references include the document image. The event's are
/// unrelated pictures.
pub fn write_demo_bundle(root: &Path) -> std::io::Result<DemoDocument> {
    let id = |s: &str| KbId::new(s).expect("valid id");
    let (person, location, event) = (id("Q90001"), id("Q90002"), id("Q90003"));
    let image = png(1);
    let mut w = BundleWriter::new(root);

    let mut p = KbRecord::new(person.clone(), "Ada Example");
    p.instance_of = vec![id("Q5")];
    p.description = Some("fictional engineer".into());
    let mut l = KbRecord::new(location.clone(), "Springfield");
    l.coordinate = Some(crate::geo::Coordinate::new(39.8, -89.65).expect("valid coordinate"));
    let mut e = KbRecord::new(event.clone(), "Springfield Fair");
    e.coordinate = l.coordinate;
    w.entity(&p, &["Ada Example"]).entity(&l, &["Springfield"]).entity(&e, &["Springfield Fair"]).event(&event);

    for bytes in [image.clone(), image.clone(), png(2)] {
        w.reference_image(&person, &bytes)?;
    }
    for bytes in [image.clone(), png(3)] {
        w.reference_image(&location, &bytes)?;
    }
    for bytes in [png(4), png(5)] {
        w.reference_image(&event, &bytes)?;
    }
    w.finish()?;
    Ok(DemoDocument {
        bundle: root.to_path_buf(),
        text: "Ada Example opened the Springfield Fair in Springfield on Monday.".into(),
        image,
        person,
        location,
        event,
    })
}
