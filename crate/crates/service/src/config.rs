//! Service settings: a TOML file, then `XMC_*` environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xmc_core::entity::{Language, DEFAULT_ANNOTATION_URL, DEFAULT_WIKIDATA_URL};
use xmc_core::evidence::DEFAULT_BING_URL;
use xmc_core::scoring::EngineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: String, message: String },
    #[error("environment variable {name}={value:?}: {message}")]
    Env { name: String, value: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    HashMock,
    Fixture,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hash-mock" => Ok(BackendKind::HashMock),
            "fixture" => Ok(BackendKind::Fixture),
            "remote" => Ok(BackendKind::Remote),
            other => Err(format!("unknown backend {other:?}; valid: hash-mock, fixture, remote")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub backend: BackendKind,
    /// Feature server address for `remote`, e.g. `http://127.0.0.1:50051`.
    pub endpoint: Option<String>,
    pub connect_timeout_secs: u64,
    pub request_timeout_secs: u64,
    /// Vector dimension of the hash-mock backend.
    pub dim: usize,
    /// Directory with `faces.tsv` and `vectors/` for `fixture`.
    pub fixtures: Option<PathBuf>,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings { backend: BackendKind::HashMock, endpoint: None, connect_timeout_secs: 5, request_timeout_secs: 30, dim: 128, fixtures: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    /// Knowledge base, recognizer and image search from a fixture bundle.
    #[default]
    Fixture,
    /// Live annotation, knowledge-base and image-search endpoints.
    Live,
}

/// Where entity linking and reference images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSettings {
    pub mode: SourceMode,
    /// Fixture bundle root for `fixture` mode.
    pub bundle: Option<PathBuf>,
    pub wikidata_url: String,
    pub annotation_url: String,
    pub annotation_key: Option<String>,
    /// Knowledge-base ids that count as events, one per line.
    pub events: Option<PathBuf>,
    pub search_url: String,
    pub search_key: Option<String>,
    pub search_market: Option<String>,
    pub timeout_secs: u64,
}

impl Default for SourceSettings {
    fn default() -> Self {
        SourceSettings {
            mode: SourceMode::Fixture,
            bundle: None,
            wikidata_url: DEFAULT_WIKIDATA_URL.into(),
            annotation_url: DEFAULT_ANNOTATION_URL.into(),
            annotation_key: None,
            events: None,
            search_url: DEFAULT_BING_URL.into(),
            search_key: None,
            search_market: None,
            timeout_secs: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArticleMode {
    #[default]
    Live,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArticleSettings {
    pub mode: ArticleMode,
    /// Directory with `index.tsv` (`url<TAB>file`) and recorded pages.
    pub fixtures: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for ArticleSettings {
    fn default() -> Self {
        ArticleSettings { mode: ArticleMode::Live, fixtures: None, timeout_secs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub listen: String,
    /// Job journal, job blobs and the disk cache live here.
    pub data_dir: PathBuf,
    pub workers: usize,
    pub max_upload_bytes: usize,
    /// Upper bound on time spent in a request handler.
    pub request_timeout_ms: u64,
    /// How long a finished job answers duplicate submissions.
    pub job_ttl_secs: u64,
    /// Time-to-live of cached external requests.
    pub cache_ttl_secs: u64,
    pub cache_capacity: usize,
    pub language: Language,
    /// How long shutdown waits for running jobs.
    pub drain_timeout_secs: u64,
    pub engine: EngineConfig,
    pub providers: ProviderSettings,
    pub sources: SourceSettings,
    pub articles: ArticleSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("xmc-data"),
            workers: 2,
            max_upload_bytes: 10 * 1024 * 1024,
            request_timeout_ms: 2000,
            job_ttl_secs: 24 * 60 * 60,
            cache_ttl_secs: 24 * 60 * 60,
            cache_capacity: 10_000,
            language: Language::En,
            drain_timeout_secs: 60,
            engine: EngineConfig::default(),
            providers: ProviderSettings::default(),
            sources: SourceSettings::default(),
            articles: ArticleSettings::default(),
        }
    }
}

impl Settings {
    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.display().to_string(), source: e })?;
        let mut settings = Settings::from_toml(&text, &path.display().to_string())?;
        if let Some(base) = path.parent() {
            settings.resolve_paths(base);
        }
        settings.apply_env(std::env::vars())?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn from_toml(text: &str, source: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax { path: source.to_string(), message: e.message().to_string() })
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        for p in [&mut self.providers.fixtures, &mut self.sources.bundle, &mut self.sources.events, &mut self.articles.fixtures].into_iter().flatten() {
            fix(p);
        }
    }

    /// Applies `XMC_*` overrides from `vars`.
    ///
    /// | variable | setting |
    /// |---|---|
    /// | `XMC_LISTEN` | `listen` |
    /// | `XMC_DATA_DIR` | `data_dir` |
    /// | `XMC_WORKERS` | `workers` |
    /// | `XMC_JOB_TTL_SECS` | `job_ttl_secs` |
    /// | `XMC_CACHE_TTL_SECS` | `cache_ttl_secs` |
    /// | `XMC_PROVIDER_BACKEND` | `providers.backend` |
    /// | `XMC_PROVIDER_ENDPOINT` | `providers.endpoint` |
    /// | `XMC_PROVIDER_FIXTURES` | `providers.fixtures` |
    /// | `XMC_BUNDLE` | `sources.bundle` |
    /// | `XMC_ANNOTATION_KEY` | `sources.annotation_key` |
    /// | `XMC_SEARCH_KEY` | `sources.search_key` |
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let bad = |message: String| ConfigError::Env { name: name.clone(), value: value.clone(), message };
            let number = || value.parse::<u64>().map_err(|e| bad(e.to_string()));
            match name.as_str() {
                "XMC_LISTEN" => self.listen = value.clone(),
                "XMC_DATA_DIR" => self.data_dir = PathBuf::from(&value),
                "XMC_WORKERS" => self.workers = number()? as usize,
                "XMC_JOB_TTL_SECS" => self.job_ttl_secs = number()?,
                "XMC_CACHE_TTL_SECS" => self.cache_ttl_secs = number()?,
                "XMC_PROVIDER_BACKEND" => self.providers.backend = value.parse().map_err(bad)?,
                "XMC_PROVIDER_ENDPOINT" => self.providers.endpoint = Some(value.clone()),
                "XMC_PROVIDER_FIXTURES" => self.providers.fixtures = Some(PathBuf::from(&value)),
                "XMC_BUNDLE" => self.sources.bundle = Some(PathBuf::from(&value)),
                "XMC_ANNOTATION_KEY" => self.sources.annotation_key = Some(value.clone()),
                "XMC_SEARCH_KEY" => self.sources.search_key = Some(value.clone()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if self.engine.k == 0 || self.engine.parallelism == 0 {
            return invalid("engine.k and engine.parallelism must be at least 1".into());
        }
        if !(self.engine.cluster.threshold.is_finite() && (0.0..=2.0).contains(&self.engine.cluster.threshold)) {
            return invalid(format!("engine.cluster.threshold {} is outside [0, 2]", self.engine.cluster.threshold));
        }
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            return invalid(format!("listen address {:?} is not host:port", self.listen));
        }
        let dir = |what: &str, p: &Option<PathBuf>| match p {
            None => invalid(format!("{what} is required")),
            Some(p) if !p.is_dir() => invalid(format!("{what} {} is not a directory", p.display())),
            Some(_) => Ok(()),
        };
        match self.providers.backend {
            BackendKind::HashMock if self.providers.dim == 0 => return invalid("providers.dim must be at least 1".into()),
            BackendKind::HashMock => {}
            BackendKind::Fixture => dir("providers.fixtures", &self.providers.fixtures)?,
            BackendKind::Remote if self.providers.endpoint.is_none() => return invalid("providers.endpoint is required for the remote backend".into()),
            BackendKind::Remote => {}
        }
        match self.sources.mode {
            SourceMode::Fixture => dir("sources.bundle", &self.sources.bundle)?,
            SourceMode::Live => {
                if self.sources.annotation_key.is_none() {
                    return invalid("sources.annotation_key (or XMC_ANNOTATION_KEY) is required in live mode".into());
                }
                if self.sources.search_key.is_none() {
                    return invalid("sources.search_key (or XMC_SEARCH_KEY) is required in live mode".into());
                }
                if let Some(p) = &self.sources.events {
                    if !p.is_file() {
                        return invalid(format!("sources.events {} does not exist", p.display()));
                    }
                }
            }
        }
        if self.articles.mode == ArticleMode::Fixture {
            dir("articles.fixtures", &self.articles.fixtures)?;
        }
        Ok(())
    }

    pub fn job_ttl(&self) -> Duration {
        Duration::from_secs(self.job_ttl_secs)
    }

    pub fn cache_ttl(&self) -> Duration {
        Duration::from_secs(self.cache_ttl_secs)
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}
