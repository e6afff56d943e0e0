//! Detection persistence: an append-only JSON-lines log with an in-memory
//! index rebuilt on open, plus filtered queries and GeoJSON export.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::classify::Label;
use crate::geo::{BoundingBox, GeoResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub post_id: String,
    pub prob_landslide: f64,
    pub label: Label,
    /// Decision threshold in force when the record was written.
    pub threshold: f64,
    pub model_id: String,
    pub geo: GeoResult,
    pub created_at: DateTime<Utc>,
    pub ingested_at: DateTime<Utc>,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.image_id.is_empty() || self.post_id.is_empty() || self.model_id.is_empty() {
            return Err("image_id, post_id and model_id must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.prob_landslide) || !(0.0..=1.0).contains(&self.threshold) {
            return Err("probability and threshold must lie in [0, 1]".into());
        }
        if Label::from_probability(self.prob_landslide, self.threshold) != self.label {
            return Err(format!(
                "label {} inconsistent with prob {} at threshold {}",
                self.label, self.prob_landslide, self.threshold
            ));
        }
        if !self.geo.is_consistent() {
            return Err("inconsistent geolocation".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersistOutcome {
    Stored,
    Deduplicated,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("corrupt store {path} at line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
#[error("bad filter: {0}")]
pub struct FilterError(pub String);

/// Conjunctive query filter. Time bounds are inclusive; bbox containment is
/// inclusive and never matches records without a point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFilter {
    pub label: Option<Label>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
    pub bbox: Option<BoundingBox>,
    pub min_prob: Option<f64>,
}

/// Raw string parameters as they arrive over HTTP or the command line.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct QueryParams {
    pub label: Option<String>,
    pub since: Option<String>,
    pub until: Option<String>,
    pub bbox: Option<String>,
    pub min_prob: Option<String>,
}

fn non_empty(s: &Option<String>) -> Option<&str> {
    s.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

impl QueryFilter {
    pub fn parse(p: &QueryParams) -> Result<Self, FilterError> {
        let time = |name: &str, v: &str| {
            DateTime::parse_from_rfc3339(v)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| FilterError(format!("{name}: {e}")))
        };
        let filter = Self {
            label: non_empty(&p.label).map(|l| l.parse().map_err(FilterError)).transpose()?,
            since: non_empty(&p.since).map(|v| time("since", v)).transpose()?,
            until: non_empty(&p.until).map(|v| time("until", v)).transpose()?,
            bbox: non_empty(&p.bbox).map(parse_bbox).transpose()?,
            min_prob: non_empty(&p.min_prob)
                .map(|v| v.parse::<f64>().map_err(|e| FilterError(format!("min_prob: {e}"))))
                .transpose()?,
        };
        filter.validate()?;
        Ok(filter)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if let Some(b) = self.bbox {
            if !b.is_valid() {
                return Err(FilterError(format!("bbox {:?} must be in range with min <= max", <[f64; 4]>::from(b))));
            }
        }
        if let Some(p) = self.min_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(FilterError(format!("min_prob {p} outside [0, 1]")));
            }
        }
        if let (Some(s), Some(u)) = (self.since, self.until) {
            if s > u {
                return Err(FilterError("since is after until".into()));
            }
        }
        Ok(())
    }

    pub fn matches(&self, r: &DetectionRecord) -> bool {
        self.label.is_none_or(|l| r.label == l)
            && self.since.is_none_or(|t| r.created_at >= t)
            && self.until.is_none_or(|t| r.created_at <= t)
            && self.min_prob.is_none_or(|p| r.prob_landslide >= p)
            && self.bbox.is_none_or(|b| r.geo.point.is_some_and(|pt| b.contains(pt)))
    }
}

fn parse_bbox(v: &str) -> Result<BoundingBox, FilterError> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| FilterError(format!("bbox: {e}")))?;
    let arr: [f64; 4] = parts
        .try_into()
        .map_err(|_| FilterError("bbox needs minLon,minLat,maxLon,maxLat".into()))?;
    Ok(BoundingBox::from(arr))
}

/// Storage behind the persister. Single writer, any number of readers.
pub trait DetectionStore: Send + Sync {
    /// First write wins: a second record with the same image id is not
    /// stored and reports [`PersistOutcome::Deduplicated`].
    fn persist(&self, rec: &DetectionRecord) -> Result<PersistOutcome, StoreError>;

    fn get(&self, image_id: &str) -> Option<DetectionRecord>;

    /// Matching records ordered by `created_at`, then `image_id`.
    fn query(&self, filter: &QueryFilter) -> Vec<DetectionRecord>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
struct Index {
    by_id: HashMap<String, Arc<DetectionRecord>>,
    ordered: BTreeMap<(DateTime<Utc>, String), Arc<DetectionRecord>>,
}

impl Index {
    fn insert(&mut self, rec: DetectionRecord) -> bool {
        if self.by_id.contains_key(&rec.image_id) {
            return false;
        }
        let rec = Arc::new(rec);
        self.ordered.insert((rec.created_at, rec.image_id.clone()), rec.clone());
        self.by_id.insert(rec.image_id.clone(), rec);
        true
    }
}

/// Append-only JSON-lines log. Every accepted record is written and synced
/// before it becomes visible to readers.
#[derive(Debug)]
pub struct LogStore {
    path: PathBuf,
    writer: Mutex<File>,
    index: RwLock<Index>,
    sync_each_write: bool,
}

impl LogStore {
    /// Opens or creates the log at `path` and replays it into the index.
    /// A torn final line from an interrupted write is truncated away; an
    /// unparseable line anywhere else is reported as corruption.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let replay = replay_log(&file, &path)?;
        if let Some((l, reason)) = replay.torn {
            tracing::warn!(path = %path.display(), line = l, %reason, "truncating torn trailing record");
            file.set_len(replay.good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok(Self { path, writer: Mutex::new(file), index: RwLock::new(replay.index), sync_each_write: true })
    }

    /// Skips the per-record fsync. Records still reach the OS before they
    /// become visible.
    pub fn without_sync(mut self) -> Self {
        self.sync_each_write = false;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

struct Replay {
    index: Index,
    good_len: u64,
    torn: Option<(usize, String)>,
}

/// Reads a log into an index. An unparseable or unterminated final line is
/// reported as torn; one anywhere else is corruption.
fn replay_log(file: &File, path: &Path) -> Result<Replay, StoreError> {
    let mut index = Index::default();
    let mut good_len = 0u64;
    let mut pending: Option<(usize, String)> = None;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if let Some((l, reason)) = pending.take() {
            return Err(StoreError::Corrupt { path: path.to_path_buf(), line: l, reason });
        }
        let complete = line.ends_with('\n');
        if line.trim().is_empty() && complete {
            good_len += n as u64;
            continue;
        }
        match serde_json::from_str::<DetectionRecord>(line.trim_end()) {
            Ok(rec) if complete => {
                index.insert(rec);
                good_len += n as u64;
            }
            Ok(_) => pending = Some((lineno, "unterminated record".into())),
            Err(e) => pending = Some((lineno, e.to_string())),
        }
    }
    Ok(Replay { index, good_len, torn: pending })
}

impl DetectionStore for LogStore {
    fn persist(&self, rec: &DetectionRecord) -> Result<PersistOutcome, StoreError> {
        rec.validate().map_err(StoreError::Invalid)?;
        if self.index.read().by_id.contains_key(&rec.image_id) {
            return Ok(PersistOutcome::Deduplicated);
        }
        let mut file = self.writer.lock();
        if self.index.read().by_id.contains_key(&rec.image_id) {
            return Ok(PersistOutcome::Deduplicated);
        }
        let mut line = serde_json::to_vec(rec).map_err(|e| StoreError::Invalid(e.to_string()))?;
        line.push(b'\n');
        file.write_all(&line)?;
        if self.sync_each_write {
            file.sync_data()?;
        }
        self.index.write().insert(rec.clone());
        Ok(PersistOutcome::Stored)
    }

    fn get(&self, image_id: &str) -> Option<DetectionRecord> {
        self.index.read().by_id.get(image_id).map(|r| (**r).clone())
    }

    fn query(&self, filter: &QueryFilter) -> Vec<DetectionRecord> {
        let index = self.index.read();
        let lower = filter.since.map(|t| (t, String::new()));
        let iter: Box<dyn Iterator<Item = &Arc<DetectionRecord>>> = match lower {
            Some(l) => Box::new(index.ordered.range(l..).map(|(_, v)| v)),
            None => Box::new(index.ordered.values()),
        };
        iter.take_while(|r| filter.until.is_none_or(|u| r.created_at <= u))
            .filter(|r| filter.matches(r))
            .map(|r| (**r).clone())
            .collect()
    }

    fn len(&self) -> usize {
        self.index.read().by_id.len()
    }
}

/// Volatile store with the same semantics as [`LogStore`].
#[derive(Debug, Default)]
pub struct MemoryStore {
    index: RwLock<Index>,
}

impl MemoryStore {
    /// Loads a [`LogStore`] file without modifying it. A torn final record
    /// is skipped.
    pub fn load_log(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let replay = replay_log(&file, path)?;
        Ok(Self { index: RwLock::new(replay.index) })
    }
}

impl DetectionStore for MemoryStore {
    fn persist(&self, rec: &DetectionRecord) -> Result<PersistOutcome, StoreError> {
        rec.validate().map_err(StoreError::Invalid)?;
        Ok(if self.index.write().insert(rec.clone()) { PersistOutcome::Stored } else { PersistOutcome::Deduplicated })
    }

    fn get(&self, image_id: &str) -> Option<DetectionRecord> {
        self.index.read().by_id.get(image_id).map(|r| (**r).clone())
    }

    fn query(&self, filter: &QueryFilter) -> Vec<DetectionRecord> {
        self.index.read().ordered.values().filter(|r| filter.matches(r)).map(|r| (**r).clone()).collect()
    }

    fn len(&self) -> usize {
        self.index.read().by_id.len()
    }
}

/// GeoJSON FeatureCollection of the matching geolocated records. Records
/// without a point are left out and counted in the foreign member
/// `excluded_count`.
pub fn export_geojson(store: &dyn DetectionStore, filter: &QueryFilter) -> Value {
    geojson_from_records(&store.query(filter))
}

pub fn geojson_from_records(records: &[DetectionRecord]) -> Value {
    let mut excluded = 0u64;
    let features: Vec<Value> = records
        .iter()
        .filter_map(|r| {
            let Some(p) = r.geo.point else {
                excluded += 1;
                return None;
            };
            Some(json!({
                "type": "Feature",
                "id": r.image_id,
                "geometry": { "type": "Point", "coordinates": [p.lon, p.lat] },
                "properties": {
                    "image_id": r.image_id,
                    "post_id": r.post_id,
                    "prob_landslide": r.prob_landslide,
                    "label": r.label,
                    "model_id": r.model_id,
                    "source": r.geo.source,
                    "confidence": r.geo.confidence,
                },
            }))
        })
        .collect();
    json!({
        "type": "FeatureCollection",
        "features": features,
        "excluded_count": excluded,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DetectionStats {
    pub total: u64,
    pub by_label: BTreeMap<String, u64>,
    pub by_source: BTreeMap<String, u64>,
    pub by_day: BTreeMap<String, u64>,
}

pub fn detection_stats(store: &dyn DetectionStore) -> DetectionStats {
    let mut s = DetectionStats::default();
    for r in store.query(&QueryFilter::default()) {
        s.total += 1;
        *s.by_label.entry(r.label.as_str().to_string()).or_default() += 1;
        *s.by_source.entry(r.geo.source.as_str().to_string()).or_default() += 1;
        *s.by_day.entry(r.created_at.format("%Y-%m-%d").to_string()).or_default() += 1;
    }
    s
}
