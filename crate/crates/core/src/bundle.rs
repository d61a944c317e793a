//! Offline fixture bundles: everything the pipeline reads from the network,
//! served from a directory instead.
//!
//! ```text
//! <root>/gazetteer.tsv     surface<TAB>kb_id
//! <root>/kb.jsonl          one KbRecord per line
//! <root>/events.txt        one event kb_id per line (optional)
//! <root>/images/<kb_id>/   reference images, consumed in file-name order
//! <root>/faces.tsv         face annotations for the fixture backend (optional)
//! <root>/vectors/*.tsv     vectors for the fixture backend (optional)
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::cache::Cache;
use crate::clock::Clock;
use crate::entity::{EventList, FixtureKnowledgeBase, Gazetteer, LinkError, Linker};
use crate::evidence::{DirectoryImageSearch, EvidenceStore, HttpImageFetcher, ImageLimits};
use crate::features::{FeatureError, FixtureTable, Providers};
use crate::scoring::{Engine, EngineConfig};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("fixture bundle {0} is not a directory")]
    NotADirectory(String),
}

#[derive(Clone)]
pub struct FixtureBundle {
    root: PathBuf,
    gazetteer: Arc<Gazetteer>,
    kb: Arc<FixtureKnowledgeBase>,
    events: Arc<EventList>,
}

impl FixtureBundle {
    pub fn load(root: &Path) -> Result<Self, BundleError> {
        if !root.is_dir() {
            return Err(BundleError::NotADirectory(root.display().to_string()));
        }
        let gazetteer = Gazetteer::load(&root.join("gazetteer.tsv"))?;
        let kb = FixtureKnowledgeBase::load(&root.join("kb.jsonl"))?;
        let events_path = root.join("events.txt");
        let events = if events_path.exists() { EventList::load(&events_path)? } else { EventList::default() };
        Ok(FixtureBundle { root: root.to_path_buf(), gazetteer: Arc::new(gazetteer), kb: Arc::new(kb), events: Arc::new(events) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn knowledge_base(&self) -> &Arc<FixtureKnowledgeBase> {
        &self.kb
    }

    pub fn linker(&self) -> Linker {
        Linker::new(self.gazetteer.clone(), Some(self.gazetteer.clone()), self.kb.clone(), self.events.clone())
    }

    pub fn image_search(&self) -> DirectoryImageSearch {
        DirectoryImageSearch::new(self.root.join("images"))
    }

    pub fn fixture_table(&self) -> Result<FixtureTable, FeatureError> {
        FixtureTable::load(&self.root)
    }

    pub fn evidence_store(&self, clock: Arc<dyn Clock>, cache: Arc<dyn Cache>) -> EvidenceStore {
        let fetcher = HttpImageFetcher::new(clock, Duration::from_secs(10), ImageLimits::default());
        EvidenceStore::new(Arc::new(self.image_search()), Arc::new(fetcher), cache)
    }

    /// An engine that links and crawls from this bundle.
    pub fn engine(&self, providers: Providers, clock: Arc<dyn Clock>, cache: Arc<dyn Cache>, config: EngineConfig) -> Engine {
        let evidence = self.evidence_store(clock, cache).with_parallelism(config.parallelism);
        Engine::new(self.linker(), Arc::new(evidence), providers, config)
    }
}
