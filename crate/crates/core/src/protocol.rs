//! Inference wire protocol shared by the HTTP client and model servers.
//!
//! `POST /v1/predict` takes a [`PredictRequest`] and answers 200 with a
//! [`PredictResponse`]; 400 means a malformed request, 422 an undecodable
//! image and 503 that no model is loaded. `GET /v1/health` answers with a
//! [`HealthResponse`].

use serde::{Deserialize, Serialize};

pub const PREDICT_PATH: &str = "/v1/predict";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub image_id: String,
    pub content_type: String,
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub image_id: String,
    pub prob_landslide: f64,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_id: String,
}
