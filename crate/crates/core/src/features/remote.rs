//! Client for the visual feature RPC contract (`proto/visual_features.proto`).

use std::sync::Arc;
use std::time::Duration;

use tonic::transport::{Channel, Endpoint};
use tonic::Code;

use super::{
    image_dimensions, Backend, BoundingBox, Embedder, EmbeddingVector, FaceDetection, FaceDetector, FeatureError, Modality,
    ProviderDescriptor, Providers,
};

#[allow(clippy::all)]
pub mod proto {
    tonic::include_proto!("xmc.visual.v1");
}

use proto::visual_features_client::VisualFeaturesClient;

/// Schema version reported by compatible servers in `HealthResponse`.
pub const CONTRACT_VERSION: &str = "xmc.visual.v1";

/// Returned vectors may deviate from unit norm by at most this much.
const WIRE_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct RemoteSettings {
    /// e.g. `http://127.0.0.1:50051`
    pub endpoint: String,
    pub connect_timeout: Duration,
    pub request_timeout: Duration,
}

impl RemoteSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteSettings {
            endpoint: endpoint.into(),
            connect_timeout: Duration::from_secs(5),
            request_timeout: Duration::from_secs(30),
        }
    }
}

impl From<Modality> for proto::Modality {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Face => proto::Modality::Face,
            Modality::Location => proto::Modality::Location,
            Modality::Event => proto::Modality::Event,
        }
    }
}

impl From<BoundingBox> for proto::BoundingBox {
    fn from(b: BoundingBox) -> Self {
        proto::BoundingBox { x: b.x, y: b.y, width: b.w, height: b.h }
    }
}

fn status_error(s: tonic::Status) -> FeatureError {
    match s.code() {
        Code::InvalidArgument => FeatureError::Format(s.message().to_string()),
        Code::Unavailable | Code::DeadlineExceeded | Code::ResourceExhausted | Code::Aborted | Code::Cancelled => {
            FeatureError::Provider { message: format!("{}: {}", s.code(), s.message()), retryable: true }
        }
        code => FeatureError::Provider { message: format!("{code}: {}", s.message()), retryable: false },
    }
}

fn contract(message: impl Into<String>) -> FeatureError {
    FeatureError::Provider { message: format!("contract violation: {}", message.into()), retryable: false }
}

fn decode_vector(r: proto::EmbedResponse) -> Result<EmbeddingVector, FeatureError> {
    if r.dim as usize != r.values.len() {
        return Err(contract(format!("dim {} but {} values", r.dim, r.values.len())));
    }
    let norm = r.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > WIRE_NORM_TOLERANCE {
        return Err(contract(format!("vector norm {norm}")));
    }
    EmbeddingVector::from_f32(&r.values, r.provider_id)
}

struct Inner {
    runtime: Option<tokio::runtime::Runtime>,
    client: VisualFeaturesClient<Channel>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        // Dropping a runtime from async context panics; detach instead.
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

impl Inner {
    fn call<T, F>(&self, f: impl FnOnce(VisualFeaturesClient<Channel>) -> F) -> Result<T, FeatureError>
    where
        F: std::future::Future<Output = Result<tonic::Response<T>, tonic::Status>>,
    {
        let rt = self.runtime.as_ref().expect("runtime present until drop");
        rt.block_on(f(self.client.clone())).map(tonic::Response::into_inner).map_err(status_error)
    }
}

/// Blocking handle on a remote feature server. Must not be used from within
/// an async runtime; call it from worker threads.
#[derive(Clone)]
pub struct RemoteProvider {
    inner: Arc<Inner>,
}

impl RemoteProvider {
    pub fn connect(settings: &RemoteSettings) -> Result<Self, FeatureError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("xmc-rpc")
            .enable_all()
            .build()
            .map_err(|e| FeatureError::Configuration(format!("rpc runtime: {e}")))?;
        let endpoint = Endpoint::from_shared(settings.endpoint.clone())
            .map_err(|e| FeatureError::Configuration(format!("bad endpoint {:?}: {e}", settings.endpoint)))?
            .connect_timeout(settings.connect_timeout)
            .timeout(settings.request_timeout);
        let channel = {
            let _guard = runtime.enter();
            endpoint.connect_lazy()
        };
        let client = VisualFeaturesClient::new(channel).max_decoding_message_size(64 << 20).max_encoding_message_size(64 << 20);
        Ok(RemoteProvider { inner: Arc::new(Inner { runtime: Some(runtime), client }) })
    }

    pub fn health(&self) -> Result<proto::HealthResponse, FeatureError> {
        self.inner.call(|mut c| async move { c.health(proto::HealthRequest {}).await })
    }

    pub fn embed_one(&self, image: &[u8], modality: Modality, bbox: Option<BoundingBox>) -> Result<EmbeddingVector, FeatureError> {
        let req = proto::EmbedRequest { modality: proto::Modality::from(modality) as i32, image: image.to_vec(), bbox: bbox.map(Into::into) };
        decode_vector(self.inner.call(|mut c| async move { c.embed(req).await })?)
    }

    /// One round trip for several images; results keep request order.
    pub fn embed_batch(&self, items: &[(&[u8], Modality, Option<BoundingBox>)]) -> Result<Vec<EmbeddingVector>, FeatureError> {
        let requests = items
            .iter()
            .map(|(img, m, b)| proto::EmbedRequest { modality: proto::Modality::from(*m) as i32, image: img.to_vec(), bbox: b.map(Into::into) })
            .collect();
        let resp = self.inner.call(|mut c| async move { c.embed_batch(proto::EmbedBatchRequest { requests }).await })?;
        if resp.responses.len() != items.len() {
            return Err(contract(format!("{} responses for {} requests", resp.responses.len(), items.len())));
        }
        resp.responses.into_iter().map(decode_vector).collect()
    }

    pub fn detect(&self, image: &[u8]) -> Result<Vec<FaceDetection>, FeatureError> {
        let (w, h) = image_dimensions(image)?;
        let req = proto::DetectFacesRequest { image: image.to_vec() };
        let resp = self.inner.call(|mut c| async move { c.detect_faces(req).await })?;
        let mut faces = Vec::with_capacity(resp.faces.len());
        for f in resp.faces {
            let b = f.bbox.ok_or_else(|| contract("detection without bbox"))?;
            let bbox = BoundingBox { x: b.x, y: b.y, w: b.width, h: b.height };
            if !bbox.fits(w, h) {
                tracing::warn!(?bbox, width = w, height = h, "dropping out-of-bounds face");
                continue;
            }
            faces.push(FaceDetection { bbox, confidence: (f.confidence as f64).clamp(0.0, 1.0) });
        }
        faces.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(faces)
    }

    /// Providers for every modality, with descriptors taken from the
    /// server's health report. Modalities the server has not loaded fail
    /// every call with a non-retryable provider error.
    pub fn into_providers(self) -> Result<Providers, FeatureError> {
        let health = self.health()?;
        if health.schema_version != CONTRACT_VERSION {
            return Err(FeatureError::Configuration(format!(
                "server speaks {:?}, expected {CONTRACT_VERSION:?}",
                health.schema_version
            )));
        }
        let embedder = |m: Modality| -> Arc<dyn Embedder> {
            let status = health.models.iter().find(|s| s.modality == proto::Modality::from(m) as i32 && s.loaded);
            Arc::new(RemoteEmbedder {
                provider: self.clone(),
                loaded: status.is_some(),
                descriptor: ProviderDescriptor {
                    provider_id: status.map(|s| s.provider_id.clone()).unwrap_or_default(),
                    modality: m,
                    dim: status.map_or(0, |s| s.dim as usize),
                    backend: Backend::RemoteRpc,
                },
            })
        };
        Ok(Providers {
            detector: Arc::new(self.clone()),
            face: embedder(Modality::Face),
            location: embedder(Modality::Location),
            event: embedder(Modality::Event),
        })
    }
}

impl FaceDetector for RemoteProvider {
    fn detect_faces(&self, image: &[u8]) -> Result<Vec<FaceDetection>, FeatureError> {
        self.detect(image)
    }
}

struct RemoteEmbedder {
    provider: RemoteProvider,
    loaded: bool,
    descriptor: ProviderDescriptor,
}

impl Embedder for RemoteEmbedder {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, image: &[u8], bbox: Option<BoundingBox>) -> Result<EmbeddingVector, FeatureError> {
        if !self.loaded {
            return Err(FeatureError::Provider {
                message: format!("no {} model loaded on the feature server", self.descriptor.modality),
                retryable: false,
            });
        }
        let v = self.provider.embed_one(image, self.descriptor.modality, bbox)?;
        if v.provider_id() != self.descriptor.provider_id {
            return Err(contract(format!("provider id {:?}, health reported {:?}", v.provider_id(), self.descriptor.provider_id)));
        }
        Ok(v)
    }
}
