//! Metadata-only geolocation: GPS point, then place bounding-box centroid,
//! then a gazetteer lookup of the author's free-text location.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{casefold, PostRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// `[min_lon, min_lat, max_lon, max_lat]`, the GeoJSON bbox order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        Self { min_lon: v[0], min_lat: v[1], max_lon: v[2], max_lat: v[3] }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.min_lon, b.min_lat, b.max_lon, b.max_lat]
    }
}

impl BoundingBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Self { min_lon, min_lat, max_lon, max_lat }
    }

    fn corners_in_range(&self) -> bool {
        LatLon::new(self.min_lat, self.min_lon).is_valid() && LatLon::new(self.max_lat, self.max_lon).is_valid()
    }

    /// In range with `min <= max` on both axes. A box whose longitudes are
    /// reversed crosses the antimeridian and is not valid here.
    pub fn is_valid(&self) -> bool {
        self.corners_in_range() && self.min_lat <= self.max_lat && self.min_lon <= self.max_lon
    }

    pub fn centroid(&self) -> Option<LatLon> {
        self.is_valid().then(|| {
            LatLon::new((self.min_lat + self.max_lat) / 2.0, (self.min_lon + self.max_lon) / 2.0)
        })
    }

    /// Inclusive containment.
    pub fn contains(&self, p: LatLon) -> bool {
        p.lon >= self.min_lon && p.lon <= self.max_lon && p.lat >= self.min_lat && p.lat <= self.max_lat
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps: Option<LatLon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place_bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place_name: Option<String>,
}

impl GeoMetadata {
    /// Range checks applied at ingest. Reversed bbox longitudes are let
    /// through (antimeridian crossing) and rejected later by [`geolocate`].
    pub fn validate(&self) -> Result<(), String> {
        if let Some(p) = self.gps {
            if !p.is_valid() {
                return Err(format!("gps ({}, {}) out of range", p.lat, p.lon));
            }
        }
        if let Some(b) = self.place_bbox {
            if !b.corners_in_range() || b.min_lat > b.max_lat {
                return Err(format!("invalid place_bbox {:?}", <[f64; 4]>::from(b)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoSource {
    Gps,
    Place,
    ProfileGazetteer,
    None,
}

impl GeoSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeoSource::Gps => "gps",
            GeoSource::Place => "place",
            GeoSource::ProfileGazetteer => "profile_gazetteer",
            GeoSource::None => "none",
        }
    }

    pub fn confidence(&self) -> Confidence {
        match self {
            GeoSource::Gps => Confidence::High,
            GeoSource::Place => Confidence::Medium,
            GeoSource::ProfileGazetteer => Confidence::Low,
            GeoSource::None => Confidence::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    None,
    Low,
    Medium,
    High,
}

impl Confidence {
    pub fn as_str(&self) -> &'static str {
        match self {
            Confidence::High => "high",
            Confidence::Medium => "medium",
            Confidence::Low => "low",
            Confidence::None => "none",
        }
    }
}

/// Outcome of [`geolocate`]. Confidence is derived from the source and a
/// point is present exactly when the source is not `none`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoResult {
    pub point: Option<LatLon>,
    pub source: GeoSource,
    pub confidence: Confidence,
}

impl GeoResult {
    pub fn none() -> Self {
        Self { point: None, source: GeoSource::None, confidence: Confidence::None }
    }

    fn located(point: LatLon, source: GeoSource) -> Self {
        Self { point: Some(point), source, confidence: source.confidence() }
    }

    pub fn is_consistent(&self) -> bool {
        self.confidence == self.source.confidence()
            && (self.source == GeoSource::None) == self.point.is_none()
            && self.point.is_none_or(|p| p.is_valid())
    }
}

/// Place-name table keyed by case-folded name.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: HashMap<String, LatLon>,
    skipped_rows: usize,
}

impl Gazetteer {
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, LatLon)>,
        S: AsRef<str>,
    {
        Self {
            entries: entries.into_iter().map(|(n, p)| (casefold(n.as_ref().trim()), p)).collect(),
            skipped_rows: 0,
        }
    }

    /// Parses `name<TAB>lat<TAB>lon` rows. Rows with the wrong field count,
    /// unparseable numbers or out-of-range coordinates are skipped and
    /// counted. Blank lines are ignored. Later rows win on name clashes.
    pub fn from_tsv<R: BufRead>(reader: R) -> std::io::Result<Self> {
        let mut g = Self::default();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_row(&line) {
                Some((name, p)) => {
                    g.entries.insert(name, p);
                }
                None => g.skipped_rows += 1,
            }
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Self::from_tsv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn lookup(&self, name: &str) -> Option<LatLon> {
        self.entries.get(&casefold(name.trim())).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn skipped_rows(&self) -> usize {
        self.skipped_rows
    }
}

fn parse_row(line: &str) -> Option<(String, LatLon)> {
    let mut fields = line.split('\t');
    let (name, lat, lon) = (fields.next()?, fields.next()?, fields.next()?);
    if fields.next().is_some() || name.trim().is_empty() {
        return None;
    }
    let p = LatLon::new(lat.trim().parse().ok()?, lon.trim().parse().ok()?);
    p.is_valid().then(|| (casefold(name.trim()), p))
}

/// Locates a post from its metadata with strict precedence
/// gps > place bbox centroid > author-location gazetteer match > none.
///
/// Invalid levels (out-of-range GPS, antimeridian-crossing boxes) are
/// skipped rather than trusted, so the cascade never yields an out-of-range
/// point.
pub fn geolocate(post: &PostRecord, gazetteer: &Gazetteer) -> GeoResult {
    if let Some(geo) = &post.geo {
        if let Some(p) = geo.gps.filter(LatLon::is_valid) {
            return GeoResult::located(p, GeoSource::Gps);
        }
        if let Some(c) = geo.place_bbox.and_then(|b| b.centroid()) {
            return GeoResult::located(c, GeoSource::Place);
        }
    }
    post.author_location
        .as_deref()
        .and_then(|loc| gazetteer.lookup(loc))
        .map_or_else(GeoResult::none, |p| GeoResult::located(p, GeoSource::ProfileGazetteer))
}
