//! Article extraction: body text and top image of a web page.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xmc_core::cache::{cache_key, Cache};
use xmc_core::entity::Language;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedArticle {
    pub url: String,
    pub title: String,
    pub text: String,
    pub main_image_url: Option<String>,
    pub language: Language,
}

#[derive(Debug, Error)]
pub enum ArticleError {
    #[error("not an http(s) url: {0:?}")]
    InvalidUrl(String),
    #[error("upstream error for {url}: {message}")]
    Upstream { url: String, message: String },
    #[error("no article text or image found at {0}")]
    Empty(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub trait ArticleExtractor: Send + Sync {
    fn parse(&self, url: &str) -> Result<ParsedArticle, ArticleError>;
}

fn check_url(url: &str) -> Result<url::Url, ArticleError> {
    match url::Url::parse(url) {
        Ok(u) if matches!(u.scheme(), "http" | "https") => Ok(u),
        _ => Err(ArticleError::InvalidUrl(url.to_string())),
    }
}

fn selector(s: &str) -> Selector {
    Selector::parse(s).expect("static selector")
}

fn clean(text: impl Iterator<Item = impl AsRef<str>>) -> String {
    let joined: Vec<String> = text.map(|t| t.as_ref().to_string()).collect();
    joined.join(" ").split_whitespace().collect::<Vec<_>>().join(" ")
}

fn meta(doc: &Html, property: &str) -> Option<String> {
    let sel = selector(&format!("meta[property=\"{property}\"], meta[name=\"{property}\"]"));
    doc.select(&sel).find_map(|m| m.value().attr("content")).map(str::trim).filter(|s| !s.is_empty()).map(String::from)
}

fn in_boilerplate(el: &ElementRef<'_>) -> bool {
    el.ancestors().filter_map(ElementRef::wrap).any(|a| matches!(a.value().name(), "nav" | "footer" | "header" | "aside" | "form"))
}

/// Guesses English or German from function-word counts.
pub fn guess_language(text: &str) -> Language {
    const EN: &[&str] = &["the", "and", "of", "to", "in", "is", "was", "for", "that", "with", "on", "he", "she"];
    const DE: &[&str] = &["der", "die", "das", "und", "ist", "nicht", "mit", "den", "von", "zu", "ein", "eine", "im", "auf"];
    let (mut en, mut de) = (0, 0);
    for w in text.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
        let w = w.to_lowercase();
        en += EN.contains(&w.as_str()) as usize;
        de += DE.contains(&w.as_str()) as usize;
    }
    if de > en {
        Language::De
    } else {
        Language::En
    }
}

/// Readability-style extraction from an HTML page fetched from `url`.
///
/// Paragraphs outside navigation, headers, footers and asides score their
/// parent element by text length; the best-scoring parent's paragraphs form
/// the text. An `<article>` element, when present, bounds the search. The
/// main image is `og:image`, else the first image in the chosen container.
pub fn extract_article(html: &str, url: &str) -> Result<ParsedArticle, ArticleError> {
    let base = check_url(url)?;
    let doc = Html::parse_document(html);
    let scope = doc.select(&selector("article")).next().unwrap_or_else(|| doc.root_element());

    let p_sel = selector("p");
    // Parents in document order, so ties go to the earliest.
    let mut scores: Vec<(usize, ElementRef<'_>)> = Vec::new();
    for p in scope.select(&p_sel) {
        if in_boilerplate(&p) {
            continue;
        }
        let len = clean(p.text()).chars().count();
        if len < 20 {
            continue;
        }
        if let Some(parent) = p.parent().and_then(ElementRef::wrap) {
            match scores.iter_mut().find(|(_, el)| el.id() == parent.id()) {
                Some(entry) => entry.0 += len,
                None => scores.push((len, parent)),
            }
        }
    }
    let best = scores.iter().fold(None::<&(usize, ElementRef<'_>)>, |acc, s| match acc {
        Some(a) if a.0 >= s.0 => Some(a),
        _ => Some(s),
    });
    let best = best.map(|(_, el)| *el);

    let text = best
        .map(|el| {
            el.children()
                .filter_map(ElementRef::wrap)
                .filter(|c| c.value().name() == "p")
                .map(|c| clean(c.text()))
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
                .join("\n\n")
        })
        .unwrap_or_default();

    let title = meta(&doc, "og:title")
        .or_else(|| scope.select(&selector("h1")).next().map(|h| clean(h.text())))
        .or_else(|| doc.select(&selector("title")).next().map(|t| clean(t.text())))
        .unwrap_or_default();

    let img_sel = selector("img[src]");
    let main_image_url = meta(&doc, "og:image")
        .or_else(|| best.and_then(|el| el.select(&img_sel).next()).and_then(|i| i.value().attr("src").map(String::from)))
        .or_else(|| scope.select(&img_sel).find(|i| !in_boilerplate(i)).and_then(|i| i.value().attr("src").map(String::from)))
        .and_then(|src| base.join(&src).ok())
        .map(|u| u.to_string());

    if text.is_empty() && main_image_url.is_none() {
        return Err(ArticleError::Empty(url.to_string()));
    }
    let language = guess_language(&text);
    Ok(ParsedArticle { url: url.to_string(), title, text, main_image_url, language })
}

/// Fetches pages over HTTP.
pub struct LiveExtractor {
    agent: ureq::Agent,
    max_bytes: u64,
}

impl LiveExtractor {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .user_agent(concat!("xmc/", env!("CARGO_PKG_VERSION")))
            .build()
            .into();
        LiveExtractor { agent, max_bytes: 5 * 1024 * 1024 }
    }
}

impl ArticleExtractor for LiveExtractor {
    fn parse(&self, url: &str) -> Result<ParsedArticle, ArticleError> {
        check_url(url)?;
        let upstream = |message: String| ArticleError::Upstream { url: url.to_string(), message };
        let mut resp = self.agent.get(url).call().map_err(|e| upstream(e.to_string()))?;
        let html = resp.body_mut().with_config().limit(self.max_bytes).read_to_string().map_err(|e| upstream(e.to_string()))?;
        extract_article(&html, url)
    }
}

/// Serves recorded pages listed in `<dir>/index.tsv` as `url<TAB>file`.
pub struct FixtureExtractor {
    pages: HashMap<String, PathBuf>,
}

impl FixtureExtractor {
    pub fn load(dir: &Path) -> Result<Self, ArticleError> {
        let index = dir.join("index.tsv");
        let text = std::fs::read_to_string(&index).map_err(|e| ArticleError::Io { path: index.display().to_string(), source: e })?;
        let pages = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .map(|(url, file)| (url.trim().to_string(), dir.join(file.trim())))
            .collect();
        Ok(FixtureExtractor { pages })
    }
}

impl ArticleExtractor for FixtureExtractor {
    fn parse(&self, url: &str) -> Result<ParsedArticle, ArticleError> {
        check_url(url)?;
        let path = self.pages.get(url).ok_or_else(|| ArticleError::Upstream { url: url.to_string(), message: "HTTP status 404".into() })?;
        let html = std::fs::read_to_string(path).map_err(|e| ArticleError::Io { path: path.display().to_string(), source: e })?;
        extract_article(&html, url)
    }
}

/// Caches successful extractions for `ttl`.
pub struct CachedExtractor {
    inner: Arc<dyn ArticleExtractor>,
    cache: Arc<dyn Cache>,
    ttl: Duration,
}

impl CachedExtractor {
    pub fn new(inner: Arc<dyn ArticleExtractor>, cache: Arc<dyn Cache>, ttl: Duration) -> Self {
        CachedExtractor { inner, cache, ttl }
    }
}

impl ArticleExtractor for CachedExtractor {
    fn parse(&self, url: &str) -> Result<ParsedArticle, ArticleError> {
        let key = cache_key(&["article", url]);
        if let Some(hit) = self.cache.get(&key).and_then(|b| serde_json::from_slice(&b).ok()) {
            return Ok(hit);
        }
        let article = self.inner.parse(url)?;
        self.cache.put(&key, &serde_json::to_vec(&article).expect("article serializes"), self.ttl);
        Ok(article)
    }
}
