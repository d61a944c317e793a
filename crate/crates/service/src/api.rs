//! HTTP routes under `/v1`.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use xmc_core::clock::Clock;
use xmc_core::entity::{fetch_entity_card, EntityType, KbId, Language, LinkError};
use xmc_core::evidence::{HttpImageFetcher, ImageFetcher, ImageLimits, ReferenceImageSet};
use xmc_core::features::{image_dimensions, Modality};
use xmc_core::scoring::Engine;

use crate::article::{ArticleError, ArticleExtractor};
use crate::jobs::{AnalysisRequest, JobStore};
use crate::worker::JobQueue;
use crate::API_SCHEMA;

/// Longest side of a reference thumbnail.
pub const THUMBNAIL_SIZE: u32 = 256;

/// Everything a request handler can reach.
pub struct AppState {
    pub store: Arc<JobStore>,
    pub engine: Arc<Engine>,
    pub articles: Arc<dyn ArticleExtractor>,
    pub queue: Arc<JobQueue>,
    pub image_fetcher: HttpImageFetcher,
    pub max_upload_bytes: usize,
    pub request_timeout: Duration,
    pub language: Language,
}

impl AppState {
    pub fn new(
        store: Arc<JobStore>,
        engine: Arc<Engine>,
        articles: Arc<dyn ArticleExtractor>,
        queue: Arc<JobQueue>,
        clock: Arc<dyn Clock>,
        max_upload_bytes: usize,
        request_timeout: Duration,
        language: Language,
    ) -> Self {
        let limits = ImageLimits { max_bytes: max_upload_bytes, min_dimension: 1 };
        let image_fetcher = HttpImageFetcher::new(clock, request_timeout, limits);
        AppState { store, engine, articles, queue, image_fetcher, max_upload_bytes, request_timeout, language }
    }
}

type Shared = Arc<AppState>;

/// Error body: `{"error": code, "message": text, "job_id"?: hint}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    job_id: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), job_id: None }
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(job) = self.job_id {
            body["job_id"] = json!(job);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<crate::jobs::StoreError> for ApiError {
    fn from(e: crate::jobs::StoreError) -> Self {
        ApiError::internal(e.to_string())
    }
}

fn link_error(e: LinkError) -> ApiError {
    match e {
        LinkError::InvalidKbId(_) | LinkError::UnsupportedLanguage(_) | LinkError::UnknownEntityType(_) | LinkError::EmptyText => {
            ApiError::invalid(e.to_string())
        }
        LinkError::NotFound(_) => ApiError::not_found(e.to_string()),
        LinkError::Transport { .. } | LinkError::Malformed(_) => ApiError::new(StatusCode::BAD_GATEWAY, "upstream", e.to_string()),
        other => ApiError::internal(other.to_string()),
    }
}

/// Runs blocking work off the async threads, bounded by the request
/// timeout. Work that overruns keeps going in the background.
async fn blocking<T: Send + 'static>(timeout: Duration, f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    match tokio::time::timeout(timeout, tokio::task::spawn_blocking(f)).await {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(ApiError::internal(e.to_string())),
        Err(_) => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "the request did not finish in time; retry later")),
    }
}

pub fn router(state: Shared) -> Router {
    let body_limit = state.max_upload_bytes * 2 + (1 << 20);
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/schema", get(schema))
        .route("/v1/parse", post(parse))
        .route("/v1/analyze", post(analyze))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/entities/{kb_id}/card", get(card))
        .route("/v1/entities/{kb_id}/references", get(references))
        .route("/v1/entities/{kb_id}/references/{index}", get(thumbnail))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

async fn healthz(State(s): State<Shared>) -> Json<serde_json::Value> {
    let providers = s.engine.providers();
    let descriptors: Vec<_> = [Modality::Face, Modality::Location, Modality::Event].into_iter().map(|m| providers.embedder(m).descriptor().clone()).collect();
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "queued": s.queue.len(),
        "active_jobs": s.store.active_count(),
        "providers": descriptors,
    }))
}

async fn schema() -> Response {
    ([(header::CONTENT_TYPE, "application/schema+json")], API_SCHEMA).into_response()
}

#[derive(Debug, Deserialize)]
struct ParseBody {
    url: String,
}

async fn parse(State(s): State<Shared>, body: Result<Json<ParseBody>, axum::extract::rejection::JsonRejection>) -> Result<Response, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::invalid(e.body_text()))?;
    let articles = s.articles.clone();
    let parsed = blocking(s.request_timeout, move || articles.parse(&body.url)).await?;
    match parsed {
        Ok(article) => Ok(Json(article).into_response()),
        Err(e @ ArticleError::InvalidUrl(_)) => Err(ApiError::invalid(e.to_string())),
        Err(e @ ArticleError::Upstream { .. }) => Err(ApiError::new(StatusCode::BAD_GATEWAY, "upstream", e.to_string())),
        Err(e @ ArticleError::Empty(_)) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "extraction_empty", e.to_string())),
        Err(e @ ArticleError::Io { .. }) => Err(ApiError::internal(e.to_string())),
    }
}

/// JSON form of an analysis request. Multipart requests carry the same
/// fields, with the image as a file part named `image`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeBody {
    #[serde(default)]
    pub text: String,
    pub image_base64: Option<String>,
    pub image_url: Option<String>,
    pub types: Option<Vec<String>>,
    pub language: Option<String>,
    pub entity: Option<String>,
}

#[derive(Debug, Serialize)]
struct Submitted {
    job_id: String,
    state: crate::jobs::JobState,
    deduplicated: bool,
}

fn too_large(limit: usize) -> ApiError {
    ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "too_large", format!("image exceeds {limit} bytes"))
}

async fn read_multipart(mut mp: Multipart, limit: usize) -> Result<(AnalyzeBody, Option<Vec<u8>>), ApiError> {
    let mut body = AnalyzeBody::default();
    let mut image = None;
    let bad = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large(limit)
        } else {
            ApiError::invalid(e.body_text())
        }
    };
    while let Some(field) = mp.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        if name == "image" {
            let bytes = field.bytes().await.map_err(bad)?;
            image = Some(bytes.to_vec());
            continue;
        }
        let value = field.text().await.map_err(bad)?;
        match name.as_str() {
            "text" => body.text = value,
            "image_url" => body.image_url = Some(value),
            "types" => body.types = Some(value.split(',').map(str::to_string).collect()),
            "language" => body.language = Some(value),
            "entity" => body.entity = Some(value),
            other => return Err(ApiError::invalid(format!("unknown form field {other:?}"))),
        }
    }
    Ok((body, image))
}

async fn analyze(State(s): State<Shared>, req: Request) -> Result<Response, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (body, mut image) = if is_multipart {
        let mp = Multipart::from_request(req, &s).await.map_err(|e| ApiError::invalid(e.body_text()))?;
        read_multipart(mp, s.max_upload_bytes).await?
    } else {
        let Json(body) = Json::<AnalyzeBody>::from_request(req, &s).await.map_err(|e| {
            if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                too_large(s.max_upload_bytes)
            } else {
                ApiError::invalid(e.body_text())
            }
        })?;
        let image = match &body.image_base64 {
            Some(b64) => Some(base64::engine::general_purpose::STANDARD.decode(b64.trim()).map_err(|e| ApiError::invalid(format!("image_base64: {e}")))?),
            None => None,
        };
        (body, image)
    };

    let types: BTreeSet<EntityType> = match &body.types {
        None => EntityType::ALL.into_iter().collect(),
        Some(list) => list.iter().filter(|t| !t.trim().is_empty()).map(|t| t.parse()).collect::<Result<_, _>>().map_err(link_error)?,
    };
    if types.is_empty() {
        return Err(ApiError::invalid("types must name at least one of person, location, event"));
    }
    let language = match &body.language {
        Some(l) => l.parse().map_err(link_error)?,
        None => s.language,
    };
    let entity = body.entity.as_ref().map(|e| e.trim().to_string()).filter(|e| !e.is_empty());
    if body.text.trim().is_empty() && entity.is_none() {
        let msg = if image.is_some() || body.image_url.is_some() { "text is empty and no entity is claimed" } else { "text and image are both empty" };
        return Err(ApiError::invalid(msg));
    }

    if image.is_none() {
        if let Some(url) = body.image_url.clone() {
            match url::Url::parse(&url) {
                Ok(u) if matches!(u.scheme(), "http" | "https") => {}
                _ => return Err(ApiError::invalid(format!("image_url must be http(s): {url:?}"))),
            }
            let state = s.clone();
            let fetched = blocking(s.request_timeout, move || state.image_fetcher.fetch(&url)).await?;
            image = Some(fetched.map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "upstream", e.to_string()))?.content);
        }
    }
    if let Some(img) = &image {
        if img.len() > s.max_upload_bytes {
            return Err(too_large(s.max_upload_bytes));
        }
        image_dimensions(img).map_err(|e| ApiError::invalid(format!("image is not decodable: {e}")))?;
    }

    let request = AnalysisRequest {
        text: body.text,
        image_sha256: image.as_ref().map(|i| hex::encode(Sha256::digest(i))),
        types,
        language,
        entity,
    };
    let state = s.clone();
    let (job_id, deduplicated) = blocking(s.request_timeout, move || state.store.submit(request, image.as_deref())).await??;
    if !deduplicated {
        s.queue.push(job_id.clone());
    }
    let state = s.store.state(&job_id).expect("just submitted");
    let status = if deduplicated { StatusCode::OK } else { StatusCode::ACCEPTED };
    Ok((status, Json(Submitted { job_id, state, deduplicated })).into_response())
}

async fn job(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    s.store.get(&id).map(|j| Json(j).into_response()).ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))
}

#[derive(Debug, Deserialize)]
struct LanguageQuery {
    language: Option<String>,
}

async fn card(State(s): State<Shared>, Path(kb_id): Path<String>, Query(q): Query<LanguageQuery>) -> Result<Response, ApiError> {
    KbId::new(kb_id.clone()).map_err(link_error)?;
    let language = match q.language {
        Some(l) => l.parse().map_err(link_error)?,
        None => s.language,
    };
    let engine = s.engine.clone();
    let card = blocking(s.request_timeout, move || fetch_entity_card(engine.linker().knowledge_base().as_ref(), &kb_id, language)).await?;
    Ok(Json(card.map_err(link_error)?).into_response())
}

/// Metadata of one crawled reference image.
#[derive(Debug, Serialize)]
pub struct ReferenceInfo {
    pub index: usize,
    pub source_url: String,
    pub content_type: String,
    pub bytes: usize,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub fetched_at: u64,
    pub thumbnail_url: String,
}

#[derive(Debug, Serialize)]
pub struct ReferenceListing {
    pub kb_id: KbId,
    pub query: String,
    pub k: usize,
    pub images: Vec<ReferenceInfo>,
    pub warnings: Vec<String>,
}

async fn reference_set(s: &Shared, kb_id: &str) -> Result<ReferenceImageSet, ApiError> {
    let id = KbId::new(kb_id).map_err(link_error)?;
    let engine = s.engine.clone();
    let k = engine.config().k;
    let lookup = id.clone();
    let cached = blocking(s.request_timeout, move || engine.evidence().cached_reference_set(&lookup, k)).await?;
    match cached {
        Some(set) => Ok(set),
        None => match s.store.job_for_entity(&id) {
            Some(job) => {
                let mut e = ApiError::new(StatusCode::CONFLICT, "not_crawled", format!("reference images for {id} are not crawled yet"));
                e.job_id = Some(job);
                Err(e)
            }
            None => Err(ApiError::not_found(format!("{id} has not been linked by any job"))),
        },
    }
}

async fn references(State(s): State<Shared>, Path(kb_id): Path<String>) -> Result<Response, ApiError> {
    let set = reference_set(&s, &kb_id).await?;
    let images = set
        .images
        .iter()
        .enumerate()
        .map(|(index, img)| {
            let dims = image_dimensions(&img.content).ok();
            ReferenceInfo {
                index,
                source_url: img.source_url.clone(),
                content_type: img.content_type.clone(),
                bytes: img.content.len(),
                width: dims.map(|d| d.0),
                height: dims.map(|d| d.1),
                fetched_at: img.fetched_at,
                thumbnail_url: format!("/v1/entities/{}/references/{index}", set.kb_id),
            }
        })
        .collect();
    Ok(Json(ReferenceListing { kb_id: set.kb_id, query: set.query, k: set.k, images, warnings: set.warnings }).into_response())
}

/// PNG thumbnail no larger than [`THUMBNAIL_SIZE`] on either side.
pub fn make_thumbnail(content: &[u8]) -> Result<Vec<u8>, image::ImageError> {
    let img = image::load_from_memory(content)?;
    let thumb = img.thumbnail(THUMBNAIL_SIZE, THUMBNAIL_SIZE);
    let mut out = Vec::new();
    thumb.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

async fn thumbnail(State(s): State<Shared>, Path((kb_id, index)): Path<(String, usize)>) -> Result<Response, ApiError> {
    let set = reference_set(&s, &kb_id).await?;
    let img = set.images.into_iter().nth(index).ok_or_else(|| ApiError::not_found(format!("{kb_id} has no reference image {index}")))?;
    let png = blocking(s.request_timeout, move || make_thumbnail(&img.content)).await?;
    let png = png.map_err(|e| ApiError::internal(format!("thumbnail: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
