#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use parking_lot::Mutex;
use serde_json::json;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub async fn serve(router: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    format!("http://{addr}")
}

#[derive(Clone, Default)]
struct MediaState {
    flaky_hits: Arc<Mutex<HashMap<String, u32>>>,
}

async fn media(Path(name): Path<String>) -> Response {
    match std::fs::read(fixtures().join("media").join(&name)) {
        Ok(b) if !name.contains("..") => b.into_response(),
        _ => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Answers 503 twice per name, then serves the file.
async fn flaky(State(s): State<MediaState>, Path(name): Path<String>) -> Response {
    let n = {
        let mut hits = s.flaky_hits.lock();
        let n = hits.entry(name.clone()).or_default();
        *n += 1;
        *n
    };
    if n <= 2 {
        return StatusCode::SERVICE_UNAVAILABLE.into_response();
    }
    media(Path(name)).await
}

async fn big() -> Vec<u8> {
    vec![0u8; 4096]
}

async fn slow() -> Response {
    tokio::time::sleep(Duration::from_secs(5)).await;
    media(Path("a.png".into())).await
}

/// Static media under `/media/NAME`, plus `/flaky/NAME`, `/big` (4 KiB)
/// and `/slow` (5 s delay).
pub async fn media_server() -> String {
    let router = Router::new()
        .route("/media/{name}", get(media))
        .route("/flaky/{name}", get(flaky))
        .route("/big", get(big))
        .route("/slow", get(slow))
        .with_state(MediaState::default());
    serve(router).await
}

/// Writes the drain feed with `{base}` replaced, returning its path.
pub fn render_feed(dir: &std::path::Path, base: &str) -> PathBuf {
    let tmpl = std::fs::read_to_string(fixtures().join("drain_feed.jsonl.tmpl")).unwrap();
    let path = dir.join("feed.jsonl");
    std::fs::write(&path, tmpl.replace("{base}", base)).unwrap();
    path
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StubMode {
    MeanGray,
    Prob(f64),
    WrongId,
    Status(u16),
    Garbage,
}

#[derive(Clone)]
struct StubState {
    mode: Arc<Mutex<StubMode>>,
    healthy: bool,
}

async fn predict(State(s): State<StubState>, body: Bytes) -> Response {
    let Ok(req) = serde_json::from_slice::<serde_json::Value>(&body) else {
        return (StatusCode::BAD_REQUEST, "bad json").into_response();
    };
    let (Some(id), Some(ct), Some(b64)) = (req["image_id"].as_str(), req["content_type"].as_str(), req["image_b64"].as_str())
    else {
        return (StatusCode::BAD_REQUEST, "missing field").into_response();
    };
    if !ct.starts_with("image/") {
        return (StatusCode::BAD_REQUEST, "bad content type").into_response();
    }
    let mode = *s.mode.lock();
    let prob = match mode {
        StubMode::Status(code) => return StatusCode::from_u16(code).unwrap().into_response(),
        StubMode::Garbage => return "not json".into_response(),
        StubMode::Prob(p) => p,
        StubMode::MeanGray | StubMode::WrongId => {
            let Ok(bytes) = base64::engine::general_purpose::STANDARD.decode(b64) else {
                return (StatusCode::BAD_REQUEST, "bad base64").into_response();
            };
            let Ok(img) = image::load_from_memory(&bytes) else {
                return (StatusCode::UNPROCESSABLE_ENTITY, "undecodable").into_response();
            };
            let gray = img.to_luma8();
            let sum: u64 = gray.pixels().map(|p| p.0[0] as u64).sum();
            sum as f64 / (gray.width() as u64 * gray.height() as u64) as f64 / 255.0
        }
    };
    let id = if mode == StubMode::WrongId { format!("{id}-other") } else { id.to_string() };
    Json(json!({ "image_id": id, "prob_landslide": prob, "model_id": "stub-mean-gray" })).into_response()
}

async fn stub_health(State(s): State<StubState>) -> Response {
    if s.healthy {
        Json(json!({ "status": "ok", "model_id": "stub-mean-gray" })).into_response()
    } else {
        StatusCode::SERVICE_UNAVAILABLE.into_response()
    }
}

pub struct Stub {
    pub base: String,
    mode: Arc<Mutex<StubMode>>,
}

impl Stub {
    pub fn set(&self, mode: StubMode) {
        *self.mode.lock() = mode;
    }
}

/// Inference server speaking the predict/health protocol. In `MeanGray`
/// mode it scores images by mean gray level / 255.
pub async fn stub_inference(healthy: bool) -> Stub {
    let mode = Arc::new(Mutex::new(StubMode::MeanGray));
    let state = StubState { mode: mode.clone(), healthy };
    let router = Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/health", get(stub_health))
        .with_state(state);
    Stub { base: serve(router).await, mode }
}
