//! Stage wiring: ingest → keyword filter → fetch/dedup → classify →
//! geolocate → persist, connected by bounded queues.

use std::fmt;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::StreamExt;
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use crate::acquire::{DedupWindow, FailureReason, ImageFetcher, ImageRecord};
use crate::classify::{classify, ClassifyError, InferenceBackend, Prediction};
use crate::config::{PipelineConfig, DEFAULT_FETCH_WORKERS, DEFAULT_QUEUE_CAPACITY};
use crate::geo::{geolocate, Gazetteer};
use crate::health::{Component, Health};
use crate::ingest::{matches_keywords, FeedConnector, FeedDescriptor, IngestCounters, KeywordSet, PostRecord};
use crate::store::{DetectionRecord, DetectionStore, LogStore, PersistOutcome};

pub const SHUTDOWN_DEADLINE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Process a finite feed to completion, then return.
    Drain,
    /// Keep running until the cancellation token fires.
    Live,
}

/// Source of `ingested_at` timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// Live counters shared by the stages and the stats endpoint.
#[derive(Debug, Default)]
pub struct PipelineCounters {
    pub ingest: Arc<IngestCounters>,
    filtered_out: AtomicU64,
    keyword_matched: AtomicU64,
    media_requested: AtomicU64,
    images_fetched: AtomicU64,
    fetch_failed: AtomicU64,
    decode_failed: AtomicU64,
    too_large: AtomicU64,
    duplicates_dropped: AtomicU64,
    unique_images: AtomicU64,
    classified: AtomicU64,
    classify_errors: AtomicU64,
    landslide_count: AtomicU64,
    geolocated: AtomicU64,
    persisted: AtomicU64,
    persist_deduplicated: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl PipelineCounters {
    pub fn snapshot(&self) -> PipelineStats {
        let g = |c: &AtomicU64| c.load(Ordering::Relaxed);
        let (lines, emitted, malformed) = self.ingest.snapshot();
        PipelineStats {
            ingested: emitted,
            keyword_matched: g(&self.keyword_matched),
            images_fetched: g(&self.images_fetched),
            duplicates_dropped: g(&self.duplicates_dropped),
            classified: g(&self.classified),
            landslide_count: g(&self.landslide_count),
            geolocated: g(&self.geolocated),
            persisted: g(&self.persisted),
            input_lines: lines,
            malformed_lines: malformed,
            filtered_out: g(&self.filtered_out),
            media_requested: g(&self.media_requested),
            fetch_failed: g(&self.fetch_failed),
            decode_failed: g(&self.decode_failed),
            too_large: g(&self.too_large),
            unique_images: g(&self.unique_images),
            classify_errors: g(&self.classify_errors),
            persist_deduplicated: g(&self.persist_deduplicated),
        }
    }
}

/// Point-in-time counters. The first eight fields are the headline stage
/// counts; the rest account for every dropped or failed item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub ingested: u64,
    pub keyword_matched: u64,
    pub images_fetched: u64,
    pub duplicates_dropped: u64,
    pub classified: u64,
    pub landslide_count: u64,
    pub geolocated: u64,
    pub persisted: u64,
    pub input_lines: u64,
    pub malformed_lines: u64,
    pub filtered_out: u64,
    pub media_requested: u64,
    pub fetch_failed: u64,
    pub decode_failed: u64,
    pub too_large: u64,
    pub unique_images: u64,
    pub classify_errors: u64,
    /// Classified images whose id was already in the store.
    pub persist_deduplicated: u64,
}

impl PipelineStats {
    /// Per-stage `in = out + dropped + errored` plus the ordering
    /// invariants between stages. Holds after a completed drain.
    pub fn conservation_violations(&self) -> Vec<String> {
        let s = self;
        let checks = [
            ("ingest", s.input_lines, s.ingested + s.malformed_lines),
            ("keyword filter", s.ingested, s.keyword_matched + s.filtered_out),
            ("fetch", s.media_requested, s.images_fetched + s.fetch_failed + s.decode_failed + s.too_large),
            ("dedup", s.images_fetched, s.unique_images + s.duplicates_dropped),
            ("classify", s.unique_images, s.classified + s.classify_errors),
            ("persist", s.classified, s.persisted + s.persist_deduplicated),
        ];
        let mut out: Vec<String> = checks
            .iter()
            .filter(|(_, lhs, rhs)| lhs != rhs)
            .map(|(stage, lhs, rhs)| format!("{stage}: {lhs} in, {rhs} accounted for"))
            .collect();
        if !(s.persisted <= s.classified && s.classified <= s.images_fetched) {
            out.push("persisted <= classified <= images_fetched violated".into());
        }
        if s.landslide_count > s.classified || s.geolocated > s.classified {
            out.push("landslide_count and geolocated must not exceed classified".into());
        }
        out
    }
}

impl fmt::Display for PipelineStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let value = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        let obj = value.as_object().ok_or(fmt::Error)?;
        let width = obj.keys().map(String::len).max().unwrap_or(0);
        // serde_json keeps fields sorted; print in declaration order instead
        for key in FIELD_ORDER {
            writeln!(f, "{key:<width$}  {}", obj[*key])?;
        }
        Ok(())
    }
}

const FIELD_ORDER: &[&str] = &[
    "ingested",
    "keyword_matched",
    "images_fetched",
    "duplicates_dropped",
    "classified",
    "landslide_count",
    "geolocated",
    "persisted",
    "input_lines",
    "malformed_lines",
    "filtered_out",
    "media_requested",
    "fetch_failed",
    "decode_failed",
    "too_large",
    "unique_images",
    "classify_errors",
    "persist_deduplicated",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("setup: {0}")]
    Setup(String),
    #[error("backend not healthy: {0}")]
    BackendUnhealthy(String),
    #[error("cannot bind API listener: {0}")]
    Listen(std::io::Error),
    #[error("pipeline aborted: {reason}")]
    Aborted { reason: String, stats: Box<PipelineStats> },
}

impl PipelineError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Setup(_) => 2,
            _ => 1,
        }
    }

    pub fn partial_stats(&self) -> Option<&PipelineStats> {
        match self {
            PipelineError::Aborted { stats, .. } => Some(stats.as_ref()),
            _ => None,
        }
    }
}

/// A fully assembled pipeline. Build with [`Pipeline::from_config`] or
/// [`Pipeline::new`] and adjust the public fields before [`Pipeline::run`].
pub struct Pipeline {
    pub feed: FeedDescriptor,
    pub keywords: Arc<KeywordSet>,
    pub fetcher: ImageFetcher,
    pub fetch_workers: usize,
    pub dedup: DedupWindow,
    pub backend: Arc<dyn InferenceBackend>,
    pub threshold: f64,
    pub max_in_flight: usize,
    pub gazetteer: Arc<Gazetteer>,
    pub store: Arc<dyn DetectionStore>,
    pub queue_capacity: usize,
    pub clock: Clock,
    pub api_listen: Option<SocketAddr>,
    pub shutdown_deadline: Duration,
    /// Extra attempts for an image while the backend reports unavailable.
    /// When they run out the whole run aborts.
    pub unavailable_retries: u32,
    pub unavailable_delay: Duration,
    pub health: Health,
    pub counters: Arc<PipelineCounters>,
}

impl Pipeline {
    pub fn new(feed: FeedDescriptor, backend: Arc<dyn InferenceBackend>, store: Arc<dyn DetectionStore>) -> Self {
        Self {
            feed,
            keywords: Arc::new(KeywordSet::default()),
            fetcher: ImageFetcher::new(Default::default()).expect("default HTTP client"),
            fetch_workers: DEFAULT_FETCH_WORKERS,
            dedup: DedupWindow::default(),
            backend,
            threshold: crate::classify::DEFAULT_THRESHOLD,
            max_in_flight: 16,
            gazetteer: Arc::new(Gazetteer::default()),
            store,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            clock: Clock::System,
            api_listen: None,
            shutdown_deadline: SHUTDOWN_DEADLINE,
            unavailable_retries: 3,
            unavailable_delay: Duration::from_millis(500),
            health: Health::default(),
            counters: Arc::default(),
        }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let setup = |e: &dyn fmt::Display| PipelineError::Setup(e.to_string());
        let keywords = match &cfg.keywords {
            Some(p) => KeywordSet::load(p).map_err(|e| setup(&format_args!("{}: {e}", p.display())))?,
            None => KeywordSet::default(),
        };
        let gazetteer = match &cfg.gazetteer {
            Some(p) => {
                let g = Gazetteer::load(p).map_err(|e| setup(&format_args!("{}: {e}", p.display())))?;
                if g.skipped_rows() > 0 {
                    tracing::warn!(path = %p.display(), skipped = g.skipped_rows(), "malformed gazetteer rows skipped");
                }
                g
            }
            None => Gazetteer::default(),
        };
        let backend = cfg.backend.build().map_err(|e| setup(&e))?;
        let store = LogStore::open(&cfg.store).map_err(|e| setup(&e))?;
        let fetcher = ImageFetcher::new(cfg.fetch.clone()).map_err(|e| setup(&e))?;

        let mut p = Self::new(cfg.feed.clone(), backend, Arc::new(store));
        p.keywords = Arc::new(keywords);
        p.fetcher = fetcher;
        p.fetch_workers = cfg.fetch_workers;
        p.dedup = DedupWindow::new(cfg.dedup_threshold_bits, cfg.dedup_window);
        p.threshold = cfg.backend.threshold;
        p.max_in_flight = cfg.backend.max_in_flight;
        p.gazetteer = Arc::new(gazetteer);
        p.queue_capacity = cfg.queue_capacity;
        p.api_listen = cfg.api_listen;
        Ok(p)
    }

    /// Runs until the feed is exhausted (drain) or `cancel` fires (live).
    /// Cancelling stops ingestion; queued work then has
    /// `shutdown_deadline` to finish before the remaining stages are
    /// aborted.
    pub async fn run(self, mode: RunMode, cancel: CancellationToken) -> Result<PipelineStats, PipelineError> {
        if self.queue_capacity == 0 || self.fetch_workers == 0 || self.max_in_flight == 0 {
            return Err(PipelineError::Setup("queue capacity and worker counts must be at least 1".into()));
        }
        match self.backend.health().await {
            Ok(model_id) => {
                tracing::info!(%model_id, "backend ready");
                self.health.set_ok(Component::Backend);
            }
            Err(e) => {
                self.health.set_degraded(Component::Backend, e.to_string());
                return Err(PipelineError::BackendUnhealthy(e.to_string()));
            }
        }
        self.health.set_ok(Component::Feed);
        self.health.set_ok(Component::Store);

        let server_stop = CancellationToken::new();
        let server = match self.api_listen {
            Some(addr) => {
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(PipelineError::Listen)?;
                tracing::info!(addr = %listener.local_addr().map_err(PipelineError::Listen)?, "serving API");
                let state = crate::api::AppState {
                    store: self.store.clone(),
                    counters: Some(self.counters.clone()),
                    health: Some(self.health.clone()),
                };
                let stop = server_stop.clone();
                Some(tokio::spawn(async move {
                    axum::serve(listener, crate::api::router(state))
                        .with_graceful_shutdown(stop.cancelled_owned())
                        .await
                }))
            }
            None => None,
        };

        let stop = cancel.child_token();
        let abort: Arc<Mutex<Option<String>>> = Arc::default();
        let counters = self.counters.clone();
        let deadline = self.shutdown_deadline;
        let stages = self.spawn_stages(mode, stop.clone(), abort.clone());
        let abort_handles: Vec<_> = stages.iter().map(JoinHandle::abort_handle).collect();

        let all = futures::future::join_all(stages);
        tokio::pin!(all);
        let finished = tokio::select! {
            r = &mut all => Some(r),
            _ = cancel.cancelled() => None,
        };
        let results = match finished {
            Some(r) => Some(r),
            None => {
                tracing::info!(?deadline, "shutdown requested, draining queues");
                tokio::time::timeout(deadline, &mut all).await.ok()
            }
        };
        match results {
            Some(results) => {
                for r in results {
                    if let Err(e) = r {
                        set_abort(&abort, &stop, format!("stage panicked: {e}"));
                    }
                }
            }
            None => {
                abort_handles.iter().for_each(|h| h.abort());
                set_abort(&abort, &stop, "shutdown deadline exceeded with work still queued".into());
            }
        }

        if mode == RunMode::Live && abort.lock().is_none() {
            cancel.cancelled().await;
        }
        server_stop.cancel();
        if let Some(server) = server {
            let _ = server.await;
        }

        let stats = counters.snapshot();
        let reason = abort.lock().take();
        match reason {
            Some(reason) => Err(PipelineError::Aborted { reason, stats: Box::new(stats) }),
            None => Ok(stats),
        }
    }

    fn spawn_stages(
        self,
        mode: RunMode,
        stop: CancellationToken,
        abort: Arc<Mutex<Option<String>>>,
    ) -> Vec<JoinHandle<()>> {
        let cap = self.queue_capacity;
        let c = self.counters.clone();
        let (post_tx, mut post_rx) = mpsc::channel::<PostRecord>(cap);
        let (match_tx, mut match_rx) = mpsc::channel::<Arc<PostRecord>>(cap);
        let (image_tx, mut image_rx) = mpsc::channel::<(Arc<PostRecord>, ImageRecord)>(cap);
        let (pred_tx, mut pred_rx) = mpsc::channel::<(Arc<PostRecord>, Prediction)>(cap);
        let (rec_tx, mut rec_rx) = mpsc::channel::<DetectionRecord>(cap);
        let mut handles = Vec::new();

        let mut feed = FeedConnector::new(self.feed.clone());
        feed.follow = mode == RunMode::Live;
        feed.counters = c.ingest.clone();
        feed.health = self.health.clone();
        {
            let (stop, abort) = (stop.clone(), abort.clone());
            handles.push(tokio::spawn(async move {
                if let Err(e) = feed.run(post_tx, stop.clone()).await {
                    feed.health.set_degraded(Component::Feed, e.to_string());
                    set_abort(&abort, &stop, format!("feed: {e}"));
                }
            }));
        }

        {
            let (c, kw) = (c.clone(), self.keywords.clone());
            handles.push(tokio::spawn(async move {
                while let Some(post) = post_rx.recv().await {
                    if !matches_keywords(&post, &kw) {
                        bump(&c.filtered_out);
                        continue;
                    }
                    bump(&c.keyword_matched);
                    if match_tx.send(Arc::new(post)).await.is_err() {
                        break;
                    }
                }
            }));
        }

        {
            let (c, fetcher, workers, mut dedup) = (c.clone(), self.fetcher.clone(), self.fetch_workers, self.dedup);
            handles.push(tokio::spawn(async move {
                // `buffered` downloads concurrently but yields in post order,
                // which keeps first-occurrence dedup deterministic.
                let outcomes = futures::stream::poll_fn(move |cx| match_rx.poll_recv(cx))
                    .map(|post| {
                        let fetcher = fetcher.clone();
                        async move {
                            let out = fetcher.fetch_images(&post).await;
                            (post, out)
                        }
                    })
                    .buffered(workers);
                tokio::pin!(outcomes);
                while let Some((post, out)) = outcomes.next().await {
                    c.media_requested.fetch_add(post.media_urls.len() as u64, Ordering::Relaxed);
                    for f in &out.failures {
                        bump(match f.reason {
                            FailureReason::FetchFailed => &c.fetch_failed,
                            FailureReason::DecodeFailed => &c.decode_failed,
                            FailureReason::TooLarge => &c.too_large,
                        });
                    }
                    for img in out.images {
                        bump(&c.images_fetched);
                        if dedup.check_and_insert(img.phash) {
                            bump(&c.duplicates_dropped);
                            continue;
                        }
                        bump(&c.unique_images);
                        if image_tx.send((post.clone(), img)).await.is_err() {
                            return;
                        }
                    }
                }
            }));
        }

        {
            let c = c.clone();
            let backend = self.backend.clone();
            let (threshold, retries, delay) = (self.threshold, self.unavailable_retries, self.unavailable_delay);
            let (stop, abort, health) = (stop.clone(), abort.clone(), self.health.clone());
            let in_flight = self.max_in_flight;
            handles.push(tokio::spawn(async move {
                let results = futures::stream::poll_fn(move |cx| image_rx.poll_recv(cx))
                    .map(|(post, img)| {
                        let backend = backend.clone();
                        async move {
                            let r = classify_retrying(&img, backend.as_ref(), threshold, retries, delay).await;
                            (post, r)
                        }
                    })
                    .buffered(in_flight);
                tokio::pin!(results);
                while let Some((post, r)) = results.next().await {
                    match r {
                        Ok(pred) => {
                            bump(&c.classified);
                            if pred.label == crate::classify::Label::Landslide {
                                bump(&c.landslide_count);
                            }
                            if pred_tx.send((post, pred)).await.is_err() {
                                return;
                            }
                        }
                        Err(e) if e.is_unavailable() => {
                            health.set_degraded(Component::Backend, e.to_string());
                            set_abort(&abort, &stop, format!("backend unavailable: {e}"));
                            return;
                        }
                        Err(e) => {
                            tracing::warn!(error = %e, "classification failed");
                            bump(&c.classify_errors);
                        }
                    }
                }
            }));
        }

        {
            let (c, gaz, clock, threshold) = (c.clone(), self.gazetteer.clone(), self.clock, self.threshold);
            handles.push(tokio::spawn(async move {
                while let Some((post, pred)) = pred_rx.recv().await {
                    let geo = geolocate(&post, &gaz);
                    if geo.point.is_some() {
                        bump(&c.geolocated);
                    }
                    let rec = DetectionRecord {
                        image_id: pred.image_id,
                        post_id: post.post_id.clone(),
                        prob_landslide: pred.prob_landslide,
                        label: pred.label,
                        threshold,
                        model_id: pred.model_id,
                        geo,
                        created_at: post.created_at,
                        ingested_at: clock.now(),
                    };
                    if rec_tx.send(rec).await.is_err() {
                        return;
                    }
                }
            }));
        }

        {
            let (store, health) = (self.store.clone(), self.health.clone());
            handles.push(tokio::spawn(async move {
                while let Some(rec) = rec_rx.recv().await {
                    let s = store.clone();
                    let r = tokio::task::spawn_blocking(move || s.persist(&rec)).await;
                    match r {
                        Ok(Ok(PersistOutcome::Stored)) => bump(&c.persisted),
                        Ok(Ok(PersistOutcome::Deduplicated)) => bump(&c.persist_deduplicated),
                        Ok(Err(e)) => {
                            health.set_degraded(Component::Store, e.to_string());
                            set_abort(&abort, &stop, format!("store: {e}"));
                            return;
                        }
                        Err(e) => {
                            set_abort(&abort, &stop, format!("store task: {e}"));
                            return;
                        }
                    }
                }
            }));
        }
        handles
    }
}

fn set_abort(slot: &Mutex<Option<String>>, stop: &CancellationToken, reason: String) {
    let mut slot = slot.lock();
    if slot.is_none() {
        tracing::error!(%reason, "aborting pipeline");
        *slot = Some(reason);
    }
    stop.cancel();
}

async fn classify_retrying(
    img: &ImageRecord,
    backend: &dyn InferenceBackend,
    threshold: f64,
    retries: u32,
    delay: Duration,
) -> Result<Prediction, ClassifyError> {
    let mut attempt = 0;
    loop {
        match classify(img, backend, threshold).await {
            Err(e) if e.is_unavailable() && attempt < retries => {
                tokio::time::sleep(delay * 2u32.saturating_pow(attempt)).await;
                attempt += 1;
            }
            r => return r,
        }
    }
}

/// Loads `cfg` into a [`Pipeline`] and runs it.
pub async fn run_pipeline(
    cfg: &PipelineConfig,
    mode: RunMode,
    cancel: CancellationToken,
) -> Result<PipelineStats, PipelineError> {
    Pipeline::from_config(cfg)?.run(mode, cancel).await
}
