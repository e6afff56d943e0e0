//! Pipeline configuration file (TOML). Relative paths resolve against the
//! directory holding the config file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;
use url::Url;

use crate::acquire::{DedupWindow, FetchPolicy};
use crate::classify::{BackendDescriptor, BackendKind, DEFAULT_THRESHOLD};
use crate::ingest::FeedDescriptor;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    feed: RawFeed,
    #[serde(default)]
    keywords: RawKeywords,
    #[serde(default)]
    fetch: RawFetch,
    #[serde(default)]
    dedup: RawDedup,
    backend: RawBackend,
    #[serde(default)]
    geo: RawGeo,
    store: RawStore,
    #[serde(default)]
    queues: RawQueues,
    #[serde(default)]
    api: RawApi,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeed {
    source: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKeywords {
    path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFetch {
    attempts: Option<u32>,
    timeout_s: Option<f64>,
    max_bytes: Option<u64>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDedup {
    threshold_bits: Option<u32>,
    window: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackend {
    kind: BackendKind,
    endpoint: Option<String>,
    threshold: Option<f64>,
    weights: Option<PathBuf>,
    timeout_s: Option<f64>,
    max_in_flight: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeo {
    gazetteer: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStore {
    path: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQueues {
    capacity: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApi {
    listen: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub feed: FeedDescriptor,
    /// `None` uses the built-in English keyword set.
    pub keywords: Option<PathBuf>,
    pub fetch: FetchPolicy,
    pub fetch_workers: usize,
    pub dedup_threshold_bits: u32,
    pub dedup_window: usize,
    pub backend: BackendDescriptor,
    pub gazetteer: Option<PathBuf>,
    pub store: PathBuf,
    pub queue_capacity: usize,
    pub api_listen: Option<SocketAddr>,
}

pub const DEFAULT_QUEUE_CAPACITY: usize = 256;
pub const DEFAULT_FETCH_WORKERS: usize = 8;

fn seconds(name: &str, v: f64) -> Result<Duration, ConfigError> {
    Duration::try_from_secs_f64(v)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| invalid(format!("{name} must be a positive number of seconds, got {v}")))
}

impl PipelineConfig {
    /// Loads, resolves and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_toml(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without touching the filesystem.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let feed = match raw.feed.source.parse::<FeedDescriptor>().map_err(|e| invalid(e.to_string()))? {
            FeedDescriptor::File(p) => FeedDescriptor::File(resolve(p)),
            tcp => tcp,
        };

        let defaults = FetchPolicy::default();
        let fetch = FetchPolicy {
            attempts: raw.fetch.attempts.unwrap_or(defaults.attempts),
            timeout: raw.fetch.timeout_s.map(|s| seconds("fetch.timeout_s", s)).transpose()?.unwrap_or(defaults.timeout),
            max_bytes: raw.fetch.max_bytes.unwrap_or(defaults.max_bytes),
            retry_delay: defaults.retry_delay,
        };

        let b = raw.backend;
        let endpoint = b
            .endpoint
            .map(|e| Url::parse(&e).map_err(|err| invalid(format!("backend.endpoint '{e}': {err}"))))
            .transpose()?;
        let backend = BackendDescriptor {
            kind: b.kind,
            endpoint,
            threshold: b.threshold.unwrap_or(DEFAULT_THRESHOLD),
            weights: b.weights.map(resolve),
            timeout: b.timeout_s.map(|s| seconds("backend.timeout_s", s)).transpose()?.unwrap_or(Duration::from_secs(10)),
            max_in_flight: b.max_in_flight.unwrap_or(16),
        };

        let api_listen = raw
            .api
            .listen
            .map(|l| l.parse::<SocketAddr>().map_err(|e| invalid(format!("api.listen '{l}': {e}"))))
            .transpose()?;

        Ok(Self {
            feed,
            keywords: raw.keywords.path.map(resolve),
            fetch,
            fetch_workers: raw.fetch.workers.unwrap_or(DEFAULT_FETCH_WORKERS),
            dedup_threshold_bits: raw.dedup.threshold_bits.unwrap_or(DedupWindow::DEFAULT_THRESHOLD_BITS),
            dedup_window: raw.dedup.window.unwrap_or(DedupWindow::DEFAULT_CAPACITY),
            backend,
            gazetteer: raw.geo.gazetteer.map(resolve),
            store: resolve(raw.store.path),
            queue_capacity: raw.queues.capacity.unwrap_or(DEFAULT_QUEUE_CAPACITY),
            api_listen,
        })
    }

    /// Checks ranges and that every referenced input exists. The store file
    /// may be absent but its directory must exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.queue_capacity == 0 {
            return Err(invalid("queues.capacity must be at least 1"));
        }
        if self.fetch_workers == 0 {
            return Err(invalid("fetch.workers must be at least 1"));
        }
        if self.fetch.attempts == 0 {
            return Err(invalid("fetch.attempts must be at least 1"));
        }
        if self.fetch.max_bytes == 0 {
            return Err(invalid("fetch.max_bytes must be at least 1"));
        }
        if self.dedup_threshold_bits > 64 {
            return Err(invalid(format!("dedup.threshold_bits {} exceeds 64", self.dedup_threshold_bits)));
        }
        if self.dedup_window == 0 {
            return Err(invalid("dedup.window must be at least 1"));
        }
        if self.backend.max_in_flight == 0 {
            return Err(invalid("backend.max_in_flight must be at least 1"));
        }
        self.backend.validate().map_err(|e| invalid(e.to_string()))?;

        let must_exist = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(invalid(format!("{what} {} does not exist", p.display())))
            }
        };
        if let FeedDescriptor::File(p) = &self.feed {
            must_exist("feed file", p)?;
        }
        if let Some(p) = &self.keywords {
            must_exist("keywords file", p)?;
        }
        if let Some(p) = &self.backend.weights {
            must_exist("weights file", p)?;
        }
        if let Some(p) = &self.gazetteer {
            must_exist("gazetteer", p)?;
        }
        let dir = self.store.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !dir.is_dir() {
            return Err(invalid(format!("store directory {} does not exist", dir.display())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[feed]
source = "file://feed.jsonl"

[backend]
kind = "embedded_reference"
weights = "w.json"

[store]
path = "out/det.jsonl"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = PipelineConfig::from_toml(MINIMAL, Path::new("/etc/sw")).unwrap();
        assert_eq!(cfg.feed, FeedDescriptor::File("/etc/sw/feed.jsonl".into()));
        assert_eq!(cfg.backend.weights.as_deref(), Some(Path::new("/etc/sw/w.json")));
        assert_eq!(cfg.store, Path::new("/etc/sw/out/det.jsonl"));
        assert_eq!(cfg.queue_capacity, 256);
        assert_eq!(cfg.fetch, FetchPolicy::default());
        assert_eq!(cfg.fetch_workers, 8);
        assert_eq!(cfg.dedup_threshold_bits, 4);
        assert_eq!(cfg.dedup_window, 100_000);
        assert_eq!(cfg.backend.threshold, 0.5);
        assert_eq!(cfg.backend.max_in_flight, 16);
        assert_eq!(cfg.api_listen, None);
        assert_eq!(cfg.keywords, None);
    }

    #[test]
    fn explicit_values() {
        let text = r#"
[feed]
source = "tcp://127.0.0.1:9000"
[keywords]
path = "/k.txt"
[fetch]
attempts = 5
timeout_s = 2.5
max_bytes = 1024
workers = 2
[dedup]
threshold_bits = 0
window = 10
[backend]
kind = "remote_http"
endpoint = "http://127.0.0.1:8500"
threshold = 0.7
max_in_flight = 4
[geo]
gazetteer = "g.tsv"
[store]
path = "/tmp/d.jsonl"
[queues]
capacity = 1
[api]
listen = "127.0.0.1:0"
"#;
        let cfg = PipelineConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.feed, FeedDescriptor::Tcp("127.0.0.1:9000".into()));
        assert_eq!(cfg.keywords.as_deref(), Some(Path::new("/k.txt")));
        assert_eq!(cfg.fetch.attempts, 5);
        assert_eq!(cfg.fetch.timeout, Duration::from_millis(2500));
        assert_eq!(cfg.fetch.max_bytes, 1024);
        assert_eq!(cfg.backend.kind, BackendKind::RemoteHttp);
        assert_eq!(cfg.backend.threshold, 0.7);
        assert_eq!(cfg.gazetteer.as_deref(), Some(Path::new("/base/g.tsv")));
        assert_eq!(cfg.queue_capacity, 1);
        assert!(cfg.api_listen.is_some());
    }

    #[test]
    fn rejects_bad_input() {
        for (text, needle) in [
            (MINIMAL.replace("[store]", "[bogus]\nx = 1\n[store]"), "unknown field"),
            (MINIMAL.replace("file://feed.jsonl", "ftp://x"), "feed descriptor"),
            (MINIMAL.replace("embedded_reference", "onnx"), "unknown variant"),
            (format!("{MINIMAL}[fetch]\ntimeout_s = -1\n"), "timeout_s"),
            (format!("{MINIMAL}[api]\nlisten = \"nowhere\"\n"), "api.listen"),
        ] {
            let err = PipelineConfig::from_toml(&text, Path::new("/")).unwrap_err().to_string();
            assert!(err.contains(needle), "{err} lacks {needle}");
        }
    }

    #[test]
    fn validate_checks_paths_and_ranges() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("feed.jsonl"), "").unwrap();
        std::fs::write(dir.path().join("w.json"), "{}").unwrap();
        let mut cfg = PipelineConfig::from_toml(MINIMAL, dir.path()).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("store directory"));
        std::fs::create_dir(dir.path().join("out")).unwrap();
        cfg.validate().unwrap();

        cfg.queue_capacity = 0;
        assert!(cfg.validate().is_err());
        cfg.queue_capacity = 1;
        cfg.dedup_threshold_bits = 65;
        assert!(cfg.validate().is_err());
        cfg.dedup_threshold_bits = 4;
        cfg.backend.threshold = 1.5;
        assert!(cfg.validate().is_err());
        cfg.backend.threshold = 0.5;
        cfg.gazetteer = Some(dir.path().join("missing.tsv"));
        assert!(cfg.validate().unwrap_err().to_string().contains("gazetteer"));
    }

    #[test]
    fn missing_file_is_read_error() {
        assert!(matches!(PipelineConfig::load("/nonexistent/cfg.toml"), Err(ConfigError::Read { .. })));
    }
}
