//! Read-only HTTP API over the detection store.
//!
//! - `GET /v1/detections` JSON array of records
//! - `GET /v1/detections.geojson` FeatureCollection
//! - `GET /v1/stats` store counts plus live pipeline counters
//! - `GET /v1/health` component health

use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;

use crate::health::Health;
use crate::pipeline::PipelineCounters;
use crate::store::{detection_stats, export_geojson, DetectionStore, QueryFilter, QueryParams};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<dyn DetectionStore>,
    pub counters: Option<Arc<PipelineCounters>>,
    pub health: Option<Health>,
}

impl AppState {
    pub fn new(store: Arc<dyn DetectionStore>) -> Self {
        Self { store, counters: None, health: None }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/detections", get(detections))
        .route("/v1/detections.geojson", get(geojson))
        .route("/v1/stats", get(stats))
        .route("/v1/health", get(health))
        .with_state(state)
}

fn bad_request(msg: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": msg }))).into_response()
}

fn filter(q: Result<Query<QueryParams>, QueryRejection>) -> Result<QueryFilter, Box<Response>> {
    let Query(params) = q.map_err(|e| Box::new(bad_request(e.body_text())))?;
    QueryFilter::parse(&params).map_err(|e| Box::new(bad_request(e.to_string())))
}

async fn detections(State(s): State<AppState>, q: Result<Query<QueryParams>, QueryRejection>) -> Response {
    match filter(q) {
        Ok(f) => Json(s.store.query(&f)).into_response(),
        Err(r) => *r,
    }
}

async fn geojson(State(s): State<AppState>, q: Result<Query<QueryParams>, QueryRejection>) -> Response {
    match filter(q) {
        Ok(f) => {
            let body = export_geojson(s.store.as_ref(), &f);
            ([(header::CONTENT_TYPE, "application/geo+json")], body.to_string()).into_response()
        }
        Err(r) => *r,
    }
}

async fn stats(State(s): State<AppState>) -> Response {
    Json(json!({
        "detections": detection_stats(s.store.as_ref()),
        "pipeline": s.counters.as_ref().map(|c| c.snapshot()),
    }))
    .into_response()
}

async fn health(State(s): State<AppState>) -> Response {
    let (ok, components) = match &s.health {
        Some(h) => (h.is_ok(), serde_json::to_value(h.snapshot()).unwrap_or_default()),
        None => (true, json!({})),
    };
    let status = if ok { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(json!({ "status": if ok { "ok" } else { "degraded" }, "components": components }))).into_response()
}
