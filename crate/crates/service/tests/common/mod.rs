#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use serde_json::{json, Value};
use tower::ServiceExt;
use xmc_core::bundle::FixtureBundle;
use xmc_core::cache::{Cache, MemoryCache};
use xmc_core::clock::{Clock, ManualClock};
use xmc_core::features::Providers;
use xmc_core::scoring::{Engine, EngineConfig};
use xmc_core::synth::{write_demo_bundle, DemoDocument};
use xmc_service::article::{ArticleExtractor, CachedExtractor, FixtureExtractor};
use xmc_service::Settings;

pub const ARTICLE_URL: &str = "https://news.example/2024/fair";
pub const EMPTY_URL: &str = "https://news.example/menu";

pub struct World {
    pub dir: tempfile::TempDir,
    pub demo: DemoDocument,
    pub clock: Arc<ManualClock>,
    pub cache: Arc<dyn Cache>,
    pub settings: Settings,
}

impl World {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let demo = write_demo_bundle(&dir.path().join("bundle")).unwrap();
        write_articles(&dir.path().join("articles"));
        let clock = Arc::new(ManualClock::new(1_700_000_000));
        let cache: Arc<dyn Cache> = Arc::new(MemoryCache::new(clock.clone(), 4096));
        let mut settings = Settings::default();
        settings.data_dir = dir.path().join("data");
        settings.workers = 2;
        settings.sources.bundle = Some(demo.bundle.clone());
        World { dir, demo, clock, cache, settings }
    }

    pub fn engine(&self, providers: Providers) -> Engine {
        let bundle = FixtureBundle::load(&self.demo.bundle).unwrap();
        let clock: Arc<dyn Clock> = self.clock.clone();
        bundle.engine(providers, clock, self.cache.clone(), EngineConfig::default())
    }

    pub fn articles(&self) -> Arc<dyn ArticleExtractor> {
        let inner = Arc::new(FixtureExtractor::load(&self.dir.path().join("articles")).unwrap());
        Arc::new(CachedExtractor::new(inner, self.cache.clone(), Duration::from_secs(86_400)))
    }

    pub fn analyze_body(&self) -> Value {
        json!({
            "text": self.demo.text,
            "image_base64": base64::engine::general_purpose::STANDARD.encode(&self.demo.image),
        })
    }
}

fn write_articles(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(
        dir.join("fair.html"),
        r#"<html><head><title>Fair | News</title><meta property="og:image" content="/img/fair.png"></head>
<body><article><h1>Ada Example opens the fair</h1><div>
<p>Ada Example opened the Springfield Fair in Springfield on Monday.</p>
<p>The fair runs until the end of the week and expects many visitors.</p></div></article></body></html>"#,
    )
    .unwrap();
    std::fs::write(dir.join("menu.html"), "<html><body><nav><a href='/'>Home</a></nav></body></html>").unwrap();
    std::fs::write(dir.join("index.tsv"), format!("{ARTICLE_URL}\tfair.html\n{EMPTY_URL}\tmenu.html\n")).unwrap();
}

/// Validates `instance` against one definition of the published schema.
pub fn assert_schema(name: &str, instance: &Value) {
    let mut schema: Value = serde_json::from_str(xmc_service::API_SCHEMA).unwrap();
    schema["$ref"] = json!(format!("#/$defs/{name}"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:#?}\n{instance:#}");
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, body, ctype)
}

pub async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body, _) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

pub async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let (status, body, _) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

/// Polls a job until it reaches a terminal state, validating every
/// snapshot, and returns the states seen in order plus the final snapshot.
pub async fn wait_for(app: &Router, job_id: &str) -> (Vec<String>, Value) {
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut seen = Vec::new();
    loop {
        let (status, job) = get_json(app, &format!("/v1/jobs/{job_id}")).await;
        assert_eq!(status, StatusCode::OK, "{job}");
        assert_schema("AnalysisJob", &job);
        let state = job["state"].as_str().unwrap().to_string();
        if seen.last() != Some(&state) {
            seen.push(state.clone());
        }
        if state == "done" || state == "failed" {
            return (seen, job);
        }
        assert!(Instant::now() < deadline, "job {job_id} stuck in {state}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

pub fn rank(state: &str) -> usize {
    ["queued", "linking", "crawling", "scoring", "done", "failed"].iter().position(|s| *s == state).unwrap()
}
