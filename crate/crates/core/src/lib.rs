//! Streaming pipeline that turns social-media posts into geolocated
//! landslide detections: ingest, acquire, classify, geolocate, persist,
//! and serve over HTTP.

pub mod acquire;
pub mod classify;
pub mod geo;
pub mod health;
pub mod ingest;
pub mod protocol;
pub mod store;
pub mod api;
pub mod config;
pub mod pipeline;
