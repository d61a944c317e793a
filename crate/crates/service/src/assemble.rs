//! Builds engines, providers and extractors from [`Settings`].

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use xmc_core::bundle::{BundleError, FixtureBundle};
use xmc_core::cache::Cache;
use xmc_core::clock::Clock;
use xmc_core::entity::{AnnotationClient, CachedKnowledgeBase, EventList, LinkError, Linker, WikidataClient};
use xmc_core::evidence::{BingImageSearch, EvidenceStore, HttpImageFetcher, ImageLimits};
use xmc_core::features::{FeatureError, FixtureTable, Providers, RemoteProvider, RemoteSettings};
use xmc_core::scoring::Engine;

use crate::article::{ArticleError, ArticleExtractor, CachedExtractor, FixtureExtractor, LiveExtractor};
use crate::config::{ArticleMode, BackendKind, ProviderSettings, Settings, SourceMode};

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Article(#[from] ArticleError),
}

/// Providers for the configured backend. `remote` contacts the feature
/// server, so call this outside any async runtime.
pub fn providers(settings: &ProviderSettings) -> Result<Providers, AssembleError> {
    match settings.backend {
        BackendKind::HashMock => Ok(Providers::hash_mock(settings.dim)),
        BackendKind::Fixture => {
            let dir = settings.fixtures.as_ref().ok_or_else(|| AssembleError::Config("providers.fixtures is required".into()))?;
            Ok(FixtureTable::load(dir)?.into_providers())
        }
        BackendKind::Remote => {
            let endpoint = settings.endpoint.as_ref().ok_or_else(|| AssembleError::Config("providers.endpoint is required".into()))?;
            let mut remote = RemoteSettings::new(endpoint.clone());
            remote.connect_timeout = Duration::from_secs(settings.connect_timeout_secs);
            remote.request_timeout = Duration::from_secs(settings.request_timeout_secs);
            Ok(RemoteProvider::connect(&remote)?.into_providers()?)
        }
    }
}

/// An engine over the configured linking and evidence sources.
pub fn engine(settings: &Settings, providers: Providers, clock: Arc<dyn Clock>, cache: Arc<dyn Cache>) -> Result<Engine, AssembleError> {
    let src = &settings.sources;
    let ttl = settings.cache_ttl();
    let timeout = Duration::from_secs(src.timeout_secs);
    let fetcher = Arc::new(HttpImageFetcher::new(clock.clone(), timeout, ImageLimits::default()));
    let (linker, search): (Linker, Arc<dyn xmc_core::evidence::ImageSearch>) = match src.mode {
        SourceMode::Fixture => {
            let root = src.bundle.as_ref().ok_or_else(|| AssembleError::Config("sources.bundle is required".into()))?;
            let bundle = FixtureBundle::load(root)?;
            (bundle.linker(), Arc::new(bundle.image_search()))
        }
        SourceMode::Live => {
            let key = src.annotation_key.clone().ok_or_else(|| AssembleError::Config("sources.annotation_key is required".into()))?;
            let search_key = src.search_key.clone().ok_or_else(|| AssembleError::Config("sources.search_key is required".into()))?;
            let annotator = Arc::new(AnnotationClient::new(src.annotation_url.clone(), key, timeout));
            let kb = Arc::new(CachedKnowledgeBase::new(Arc::new(WikidataClient::new(src.wikidata_url.clone(), timeout)), cache.clone(), ttl));
            let events = match &src.events {
                Some(p) => EventList::load(p)?,
                None => EventList::default(),
            };
            let mut search = BingImageSearch::new(src.search_url.clone(), search_key, timeout);
            if let Some(m) = &src.search_market {
                search = search.with_market(m.clone());
            }
            (Linker::new(annotator.clone(), Some(annotator), kb, Arc::new(events)), Arc::new(search))
        }
    };
    let evidence = EvidenceStore::new(search, fetcher, cache).with_ttl(ttl).with_parallelism(settings.engine.parallelism);
    Ok(Engine::new(linker, Arc::new(evidence), providers, settings.engine))
}

pub fn article_extractor(settings: &Settings, cache: Arc<dyn Cache>) -> Result<Arc<dyn ArticleExtractor>, AssembleError> {
    let timeout = Duration::from_secs(settings.articles.timeout_secs);
    let inner: Arc<dyn ArticleExtractor> = match settings.articles.mode {
        ArticleMode::Live => Arc::new(LiveExtractor::new(timeout)),
        ArticleMode::Fixture => {
            let dir = settings.articles.fixtures.as_ref().ok_or_else(|| AssembleError::Config("articles.fixtures is required".into()))?;
            Arc::new(FixtureExtractor::load(dir)?)
        }
    };
    Ok(Arc::new(CachedExtractor::new(inner, cache, settings.cache_ttl())))
}
