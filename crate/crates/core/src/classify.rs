//! Landslide / not-landslide tagging through a pluggable inference backend.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use url::Url;

use crate::acquire::{area_resize, decode_gray, ImageRecord};
use crate::protocol::{HealthResponse, PredictRequest, PredictResponse, HEALTH_PATH, PREDICT_PATH};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Landslide,
    NotLandslide,
}

impl Label {
    /// Ties at the threshold go to the positive class.
    pub fn from_probability(prob: f64, threshold: f64) -> Self {
        if prob >= threshold {
            Label::Landslide
        } else {
            Label::NotLandslide
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Landslide => "landslide",
            Label::NotLandslide => "not_landslide",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "landslide" => Ok(Label::Landslide),
            "not_landslide" => Ok(Label::NotLandslide),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub prob_landslide: f64,
    pub label: Label,
    pub model_id: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyErrorKind {
    #[error("backend timed out")]
    Timeout,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend rejected request with HTTP {0}")]
    Rejected(u16),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("classifying {image_id}: {kind}")]
pub struct ClassifyError {
    pub image_id: String,
    pub kind: ClassifyErrorKind,
}

impl ClassifyError {
    fn new(image_id: &str, kind: ClassifyErrorKind) -> Self {
        Self { image_id: image_id.to_string(), kind }
    }

    /// Errors that suggest the backend itself is down rather than the
    /// request being bad.
    pub fn is_unavailable(&self) -> bool {
        matches!(self.kind, ClassifyErrorKind::Timeout | ClassifyErrorKind::Unavailable(_))
    }
}

/// A backend's raw answer before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub prob_landslide: f64,
    pub model_id: String,
}

/// Inference must be deterministic: the same image always gets the same
/// probability.
#[async_trait]
pub trait InferenceBackend: Send + Sync {
    async fn score(&self, image: &ImageRecord) -> Result<Score, ClassifyError>;

    /// Returns the served model id when the backend is ready.
    async fn health(&self) -> Result<String, ClassifyError>;
}

/// Scores `image` and applies the threshold. Probabilities outside `[0, 1]`
/// are rejected, never clamped.
pub async fn classify(
    image: &ImageRecord,
    backend: &dyn InferenceBackend,
    threshold: f64,
) -> Result<Prediction, ClassifyError> {
    let started = Instant::now();
    let score = backend.score(image).await?;
    if !(0.0..=1.0).contains(&score.prob_landslide) {
        return Err(ClassifyError::new(
            &image.image_id,
            ClassifyErrorKind::ProtocolViolation(format!("prob_landslide {} outside [0, 1]", score.prob_landslide)),
        ));
    }
    if score.model_id.is_empty() {
        return Err(ClassifyError::new(&image.image_id, ClassifyErrorKind::ProtocolViolation("empty model_id".into())));
    }
    Ok(Prediction {
        image_id: image.image_id.clone(),
        prob_landslide: score.prob_landslide,
        label: Label::from_probability(score.prob_landslide, threshold),
        model_id: score.model_id,
        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteHttp,
    EmbeddedReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub endpoint: Option<Url>,
    pub threshold: f64,
    /// Weights file for the embedded reference backend.
    pub weights: Option<PathBuf>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

#[derive(Debug, Error)]
pub enum BackendSetupError {
    #[error("remote_http backend requires an endpoint")]
    MissingEndpoint,
    #[error("embedded_reference backend requires a weights file")]
    MissingWeights,
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("weights file {path}: {reason}")]
    BadWeights { path: PathBuf, reason: String },
    #[error(transparent)]
    Http(#[from] reqwest::Error),
}

impl BackendDescriptor {
    pub fn embedded(weights: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::EmbeddedReference,
            endpoint: None,
            threshold: DEFAULT_THRESHOLD,
            weights: Some(weights.into()),
            timeout: Duration::from_secs(10),
            max_in_flight: 16,
        }
    }

    pub fn remote(endpoint: Url) -> Self {
        Self {
            kind: BackendKind::RemoteHttp,
            endpoint: Some(endpoint),
            threshold: DEFAULT_THRESHOLD,
            weights: None,
            timeout: Duration::from_secs(10),
            max_in_flight: 16,
        }
    }

    pub fn validate(&self) -> Result<(), BackendSetupError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(BackendSetupError::BadThreshold(self.threshold));
        }
        match self.kind {
            BackendKind::RemoteHttp if self.endpoint.is_none() => Err(BackendSetupError::MissingEndpoint),
            BackendKind::EmbeddedReference if self.weights.is_none() => Err(BackendSetupError::MissingWeights),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn InferenceBackend>, BackendSetupError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::RemoteHttp => Arc::new(RemoteHttpBackend::new(
                self.endpoint.clone().ok_or(BackendSetupError::MissingEndpoint)?,
                self.timeout,
                self.max_in_flight,
            )?),
            BackendKind::EmbeddedReference => Arc::new(EmbeddedReferenceBackend::new(ReferenceWeights::load(
                self.weights.as_deref().ok_or(BackendSetupError::MissingWeights)?,
            )?)),
        })
    }
}

pub const FEATURE_SIDE: usize = 8;
pub const FEATURE_LEN: usize = FEATURE_SIDE * FEATURE_SIDE;
const WEIGHTS_FORMAT: &str = "slidewatch-reference-weights";

/// Versioned logistic-regression weights over the 64-dim mean-pooled
/// grayscale feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceWeights {
    pub format: String,
    pub version: u32,
    pub model_id: String,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ReferenceWeights {
    pub fn new(model_id: impl Into<String>, weights: Vec<f64>, bias: f64) -> Self {
        Self { format: WEIGHTS_FORMAT.into(), version: 1, model_id: model_id.into(), weights, bias }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.format != WEIGHTS_FORMAT {
            return Err(format!("unexpected format '{}'", self.format));
        }
        if self.version != 1 {
            return Err(format!("unsupported version {}", self.version));
        }
        if self.model_id.is_empty() {
            return Err("empty model_id".into());
        }
        if self.weights.len() != FEATURE_LEN {
            return Err(format!("expected {FEATURE_LEN} weights, found {}", self.weights.len()));
        }
        if !self.weights.iter().chain([&self.bias]).all(|w| w.is_finite()) {
            return Err("non-finite weight".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BackendSetupError> {
        let bad = |reason: String| BackendSetupError::BadWeights { path: path.to_path_buf(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let w: Self = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        w.validate().map_err(bad)?;
        Ok(w)
    }
}

/// Overflow-safe logistic function.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The 8×8 area-averaged grayscale image scaled to `[0, 1]`, row-major.
pub fn reference_features(gray: &image::GrayImage) -> Vec<f64> {
    area_resize(gray, FEATURE_SIDE, FEATURE_SIDE).into_iter().map(|v| v / 255.0).collect()
}

/// `logistic(w·f + b)` for the reference features of `gray`.
pub fn embedded_reference_score(gray: &image::GrayImage, weights: &ReferenceWeights) -> f64 {
    let f = reference_features(gray);
    let z: f64 = weights.weights.iter().zip(&f).map(|(w, x)| w * x).sum::<f64>() + weights.bias;
    logistic(z)
}

/// In-process reference model. Stands in for a real CNN in tests and small
/// deployments.
#[derive(Debug, Clone)]
pub struct EmbeddedReferenceBackend {
    weights: ReferenceWeights,
}

impl EmbeddedReferenceBackend {
    pub fn new(weights: ReferenceWeights) -> Self {
        Self { weights }
    }
}

#[async_trait]
impl InferenceBackend for EmbeddedReferenceBackend {
    async fn score(&self, image: &ImageRecord) -> Result<Score, ClassifyError> {
        let (_, gray) = decode_gray(&image.bytes)
            .map_err(|e| ClassifyError::new(&image.image_id, ClassifyErrorKind::Decode(e.to_string())))?;
        Ok(Score {
            prob_landslide: embedded_reference_score(&gray, &self.weights),
            model_id: self.weights.model_id.clone(),
        })
    }

    async fn health(&self) -> Result<String, ClassifyError> {
        Ok(self.weights.model_id.clone())
    }
}

/// Client for the HTTP inference protocol. Connections are pooled by the
/// underlying client and in-flight requests are capped.
#[derive(Debug, Clone)]
pub struct RemoteHttpBackend {
    client: reqwest::Client,
    predict_url: Url,
    health_url: Url,
    in_flight: Arc<Semaphore>,
}

impl RemoteHttpBackend {
    pub fn new(endpoint: Url, timeout: Duration, max_in_flight: usize) -> reqwest::Result<Self> {
        let client = reqwest::Client::builder().timeout(timeout).connect_timeout(timeout).build()?;
        let join = |path: &str| {
            let mut u = endpoint.clone();
            let base = u.path().trim_end_matches('/').to_string();
            u.set_path(&format!("{base}{path}"));
            u
        };
        Ok(Self {
            client,
            predict_url: join(PREDICT_PATH),
            health_url: join(HEALTH_PATH),
            in_flight: Arc::new(Semaphore::new(max_in_flight.max(1))),
        })
    }
}

fn transport_error(e: reqwest::Error) -> ClassifyErrorKind {
    if e.is_timeout() {
        ClassifyErrorKind::Timeout
    } else if e.is_connect() || e.is_request() {
        ClassifyErrorKind::Unavailable(e.to_string())
    } else {
        ClassifyErrorKind::Malformed(e.to_string())
    }
}

#[async_trait]
impl InferenceBackend for RemoteHttpBackend {
    async fn score(&self, image: &ImageRecord) -> Result<Score, ClassifyError> {
        let err = |kind| ClassifyError::new(&image.image_id, kind);
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let body = PredictRequest {
            image_id: image.image_id.clone(),
            content_type: image.content_type.mime().to_string(),
            image_b64: base64::engine::general_purpose::STANDARD.encode(&image.bytes),
        };
        let resp = self
            .client
            .post(self.predict_url.clone())
            .json(&body)
            .send()
            .await
            .map_err(|e| err(transport_error(e)))?;
        let status = resp.status();
        if status == reqwest::StatusCode::SERVICE_UNAVAILABLE {
            return Err(err(ClassifyErrorKind::Unavailable("HTTP 503".into())));
        }
        if !status.is_success() {
            return Err(err(ClassifyErrorKind::Rejected(status.as_u16())));
        }
        let bytes = resp.bytes().await.map_err(|e| err(transport_error(e)))?;
        let parsed: PredictResponse =
            serde_json::from_slice(&bytes).map_err(|e| err(ClassifyErrorKind::Malformed(e.to_string())))?;
        if parsed.image_id != image.image_id {
            return Err(err(ClassifyErrorKind::ProtocolViolation(format!(
                "response for '{}' to request for '{}'",
                parsed.image_id, image.image_id
            ))));
        }
        Ok(Score { prob_landslide: parsed.prob_landslide, model_id: parsed.model_id })
    }

    async fn health(&self) -> Result<String, ClassifyError> {
        let err = |kind| ClassifyError::new("<health>", kind);
        let resp = self.client.get(self.health_url.clone()).send().await.map_err(|e| err(transport_error(e)))?;
        if !resp.status().is_success() {
            return Err(err(ClassifyErrorKind::Unavailable(format!("HTTP {}", resp.status()))));
        }
        let h: HealthResponse = resp.json().await.map_err(|e| err(ClassifyErrorKind::Malformed(e.to_string())))?;
        if h.status != "ok" {
            return Err(err(ClassifyErrorKind::Unavailable(format!("status '{}'", h.status))));
        }
        Ok(h.model_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquire::ContentType;
    use chrono::Utc;
    use image::{GrayImage, Luma};
    use proptest::prelude::*;

    struct Fixed(f64);

    #[async_trait]
    impl InferenceBackend for Fixed {
        async fn score(&self, _: &ImageRecord) -> Result<Score, ClassifyError> {
            Ok(Score { prob_landslide: self.0, model_id: "fixed".into() })
        }
        async fn health(&self) -> Result<String, ClassifyError> {
            Ok("fixed".into())
        }
    }

    fn dummy_image() -> ImageRecord {
        ImageRecord {
            image_id: "p#0".into(),
            source_post: "p".into(),
            bytes: bytes::Bytes::from_static(b"x"),
            content_type: ContentType::Png,
            phash: 0,
            fetched_at: Utc::now(),
        }
    }

    #[tokio::test]
    async fn threshold_rule() {
        let img = dummy_image();
        assert_eq!(classify(&img, &Fixed(0.9), 0.5).await.unwrap().label, Label::Landslide);
        assert_eq!(classify(&img, &Fixed(0.5), 0.5).await.unwrap().label, Label::Landslide);
        assert_eq!(classify(&img, &Fixed(0.49), 0.5).await.unwrap().label, Label::NotLandslide);
    }

    #[tokio::test]
    async fn out_of_range_probability_is_rejected() {
        for p in [1.0000001, -0.1, f64::NAN] {
            let e = classify(&dummy_image(), &Fixed(p), 0.5).await.unwrap_err();
            assert_eq!(e.image_id, "p#0");
            assert!(matches!(e.kind, ClassifyErrorKind::ProtocolViolation(_)));
        }
    }

    #[test]
    fn zero_weights_score_one_half() {
        let w = ReferenceWeights::new("zero", vec![0.0; 64], 0.0);
        for px in [0u8, 128, 255] {
            assert_eq!(embedded_reference_score(&GrayImage::from_pixel(13, 7, Luma([px])), &w), 0.5);
        }
    }

    #[test]
    fn large_bias_saturates() {
        let img = GrayImage::from_pixel(4, 4, Luma([10]));
        let w = ReferenceWeights::new("sat", vec![0.0; 64], 1e3);
        assert_eq!(embedded_reference_score(&img, &w), 1.0);
        let w = ReferenceWeights::new("sat", vec![0.0; 64], -1e3);
        assert_eq!(embedded_reference_score(&img, &w), 0.0);
        assert!((logistic(40.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weights_validation() {
        assert!(ReferenceWeights::new("m", vec![0.0; 64], 0.0).validate().is_ok());
        assert!(ReferenceWeights::new("m", vec![0.0; 63], 0.0).validate().is_err());
        assert!(ReferenceWeights::new("", vec![0.0; 64], 0.0).validate().is_err());
        assert!(ReferenceWeights::new("m", vec![0.0; 64], f64::INFINITY).validate().is_err());
        let mut w = ReferenceWeights::new("m", vec![0.0; 64], 0.0);
        w.version = 2;
        assert!(w.validate().is_err());
    }

    #[test]
    fn descriptor_validation() {
        let mut d = BackendDescriptor::remote("http://localhost:1".parse().unwrap());
        d.endpoint = None;
        assert!(matches!(d.validate(), Err(BackendSetupError::MissingEndpoint)));
        let mut d = BackendDescriptor::embedded("/nonexistent/weights.json");
        assert!(matches!(d.build(), Err(BackendSetupError::BadWeights { .. })));
        d.threshold = 1.5;
        assert!(matches!(d.validate(), Err(BackendSetupError::BadThreshold(_))));
    }

    proptest! {
        #[test]
        fn raising_threshold_never_adds_positives(p in 0.0f64..=1.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            if Label::from_probability(p, hi) == Label::Landslide {
                prop_assert_eq!(Label::from_probability(p, lo), Label::Landslide);
            }
        }
    }
}
