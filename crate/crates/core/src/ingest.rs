//! Post stream ingestion and keyword filtering.
//!
//! Feeds are newline-delimited JSON objects using the [`PostRecord`] field
//! names, read either from a replay file (`file://path`) or a TCP socket
//! (`tcp://host:port`).

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncRead, BufReader};
use tokio::sync::mpsc;
use tokio_util::sync::CancellationToken;
use url::Url;

use crate::geo::GeoMetadata;
use crate::health::{Component, Health};

/// One social media post. Immutable once decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
    #[serde(default)]
    pub media_urls: Vec<Url>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_location: Option<String>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("invalid feed descriptor '{0}' (expected file://PATH or tcp://HOST:PORT)")]
    BadDescriptor(String),
    #[error("invalid keyword set: {0}")]
    BadKeywords(String),
    #[error("feed endpoint {endpoint} unreachable after {attempts} attempts")]
    Unreachable { endpoint: String, attempts: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decodes one feed line. Blank lines yield `Ok(None)` and are not counted
/// as input.
pub fn decode_line(line: &str) -> Result<Option<PostRecord>, IngestError> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(None);
    }
    let post: PostRecord = serde_json::from_str(line).map_err(|e| IngestError::Malformed(e.to_string()))?;
    if post.post_id.trim().is_empty() {
        return Err(IngestError::Malformed("empty post_id".into()));
    }
    if let Some(geo) = &post.geo {
        geo.validate().map_err(IngestError::Malformed)?;
    }
    Ok(Some(post))
}

/// Simple case folding: single-character lowercase mappings plus the
/// Greek and Latin variants whose fold differs from their lowercase form.
/// Characters whose lowercase expands to several characters are kept as-is.
pub fn casefold(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

fn fold_char(c: char) -> char {
    match c {
        'ς' => 'σ',
        'ſ' => 's',
        'ϐ' => 'β',
        'ϑ' => 'θ',
        'ϕ' => 'φ',
        'ϖ' => 'π',
        'ϰ' => 'κ',
        'ϱ' => 'ρ',
        'ϵ' => 'ε',
        'ẛ' => 'ṡ',
        '\u{1FBE}' => 'ι',
        'ẞ' => 'ß',
        _ => {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        }
    }
}

/// Case-folded search terms and hashtag terms (stored without `#`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSet {
    terms: Vec<String>,
    hashtag_terms: Vec<String>,
}

impl KeywordSet {
    pub const DEFAULT_TERMS: [&'static str; 6] =
        ["landslide", "landslip", "earth slip", "mudslide", "rockslide", "rock fall"];
    pub const DEFAULT_HASHTAGS: [&'static str; 6] =
        ["landslide", "landslip", "earthslip", "mudslide", "rockslide", "rockfall"];

    pub fn new<T, H>(terms: T, hashtag_terms: H) -> Result<Self, IngestError>
    where
        T: IntoIterator,
        T::Item: AsRef<str>,
        H: IntoIterator,
        H::Item: AsRef<str>,
    {
        fn fold_all<I>(items: I, strip_hash: bool, kind: &str) -> Result<Vec<String>, IngestError>
        where
            I: IntoIterator,
            I::Item: AsRef<str>,
        {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for raw in items {
                let mut t = raw.as_ref().trim();
                if strip_hash {
                    t = t.trim_start_matches('#');
                }
                let folded = casefold(t);
                if folded.is_empty() {
                    return Err(IngestError::BadKeywords(format!("empty {kind}")));
                }
                if !seen.insert(folded.clone()) {
                    return Err(IngestError::BadKeywords(format!("duplicate {kind} '{folded}'")));
                }
                out.push(folded);
            }
            Ok(out)
        }
        let terms = fold_all(terms, false, "term")?;
        let hashtag_terms = fold_all(hashtag_terms, true, "hashtag term")?;
        if terms.is_empty() && hashtag_terms.is_empty() {
            return Err(IngestError::BadKeywords("no terms".into()));
        }
        Ok(Self { terms, hashtag_terms })
    }

    /// Parses a keyword file: one term per line, `#:tag` declares a hashtag
    /// term, other lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut terms = Vec::new();
        let mut tags = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(tag) = line.strip_prefix("#:") {
                tags.push(tag.trim().to_string());
            } else if !line.starts_with('#') {
                terms.push(line.to_string());
            }
        }
        Self::new(terms, tags)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn hashtag_terms(&self) -> &[String] {
        &self.hashtag_terms
    }
}

impl Default for KeywordSet {
    fn default() -> Self {
        Self::new(Self::DEFAULT_TERMS, Self::DEFAULT_HASHTAGS).expect("default keywords are valid")
    }
}

/// Hashtag tokens of already-folded text: the run of alphanumerics and
/// underscores following each `#`.
fn hashtags(folded: &str) -> impl Iterator<Item = &str> {
    folded.split('#').skip(1).filter_map(|seg| {
        let end = seg.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(seg.len());
        (end > 0).then(|| &seg[..end])
    })
}

/// True when the folded text contains any term, or any hashtag equals a
/// hashtag term.
pub fn matches_keywords(post: &PostRecord, kw: &KeywordSet) -> bool {
    let text = casefold(&post.text);
    kw.terms.iter().any(|t| text.contains(t.as_str()))
        || hashtags(&text).any(|h| kw.hashtag_terms.iter().any(|t| t == h))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedDescriptor {
    File(PathBuf),
    Tcp(String),
}

impl FromStr for FeedDescriptor {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("file://") {
            if !path.is_empty() {
                return Ok(Self::File(PathBuf::from(path)));
            }
        } else if let Some(addr) = s.strip_prefix("tcp://") {
            if let Some((host, port)) = addr.rsplit_once(':') {
                if !host.is_empty() && port.parse::<u16>().is_ok() {
                    return Ok(Self::Tcp(addr.to_string()));
                }
            }
        }
        Err(IngestError::BadDescriptor(s.to_string()))
    }
}

impl fmt::Display for FeedDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::File(p) => write!(f, "file://{}", p.display()),
            Self::Tcp(a) => write!(f, "tcp://{a}"),
        }
    }
}

/// Capped exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub initial: Duration,
    pub factor: u32,
    pub cap: Duration,
    /// Give up after this many consecutive failed connects; `None` retries
    /// forever.
    pub max_attempts: Option<u32>,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self { initial: Duration::from_secs(1), factor: 2, cap: Duration::from_secs(60), max_attempts: None }
    }
}

impl BackoffPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let mult = self.factor.checked_pow(attempt).unwrap_or(u32::MAX);
        self.initial.checked_mul(mult).map_or(self.cap, |d| d.min(self.cap))
    }
}

#[derive(Debug, Default)]
pub struct IngestCounters {
    pub lines: AtomicU64,
    pub emitted: AtomicU64,
    pub malformed: AtomicU64,
}

impl IngestCounters {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.lines.load(Ordering::Relaxed),
            self.emitted.load(Ordering::Relaxed),
            self.malformed.load(Ordering::Relaxed),
        )
    }
}

/// Reads one feed into a bounded channel.
pub struct FeedConnector {
    pub source: FeedDescriptor,
    pub backoff: BackoffPolicy,
    /// Reconnect after a TCP stream ends instead of finishing.
    pub follow: bool,
    pub counters: Arc<IngestCounters>,
    pub health: Health,
}

impl FeedConnector {
    pub fn new(source: FeedDescriptor) -> Self {
        Self {
            source,
            backoff: BackoffPolicy::default(),
            follow: false,
            counters: Arc::default(),
            health: Health::default(),
        }
    }

    /// Pumps posts into `tx` in arrival order until the feed ends, the
    /// receiver is dropped or `cancel` fires. Malformed lines are counted
    /// and skipped.
    pub async fn run(&self, tx: mpsc::Sender<PostRecord>, cancel: CancellationToken) -> Result<(), IngestError> {
        match &self.source {
            FeedDescriptor::File(path) => {
                let file = tokio::fs::File::open(path).await?;
                self.pump(file, &tx, &cancel).await
            }
            FeedDescriptor::Tcp(addr) => loop {
                let stream = self.connect_tcp(addr, &cancel).await?;
                let Some(stream) = stream else { return Ok(()) };
                self.pump(stream, &tx, &cancel).await?;
                if !self.follow || cancel.is_cancelled() || tx.is_closed() {
                    return Ok(());
                }
                tracing::warn!(%addr, "feed stream ended, reconnecting");
            },
        }
    }

    async fn connect_tcp(
        &self,
        addr: &str,
        cancel: &CancellationToken,
    ) -> Result<Option<tokio::net::TcpStream>, IngestError> {
        let mut attempt = 0u32;
        loop {
            match tokio::net::TcpStream::connect(addr).await {
                Ok(s) => {
                    self.health.set_ok(Component::Feed);
                    return Ok(Some(s));
                }
                Err(e) => {
                    self.health.set_degraded(Component::Feed, format!("connect {addr}: {e}"));
                    if self.backoff.max_attempts.is_some_and(|m| attempt + 1 >= m) {
                        return Err(IngestError::Unreachable { endpoint: addr.to_string(), attempts: attempt + 1 });
                    }
                    let delay = self.backoff.delay(attempt);
                    tracing::warn!(%addr, error = %e, ?delay, "feed connect failed");
                    tokio::select! {
                        _ = cancel.cancelled() => return Ok(None),
                        _ = tokio::time::sleep(delay) => {}
                    }
                    attempt = attempt.saturating_add(1);
                }
            }
        }
    }

    async fn pump<R: AsyncRead + Unpin>(
        &self,
        reader: R,
        tx: &mpsc::Sender<PostRecord>,
        cancel: &CancellationToken,
    ) -> Result<(), IngestError> {
        let mut lines = BufReader::new(reader).lines();
        loop {
            let line = tokio::select! {
                _ = cancel.cancelled() => return Ok(()),
                line = lines.next_line() => line?,
            };
            let Some(line) = line else { return Ok(()) };
            let post = match decode_line(&line) {
                Ok(Some(p)) => p,
                Ok(None) => continue,
                Err(e) => {
                    self.counters.lines.fetch_add(1, Ordering::Relaxed);
                    self.counters.malformed.fetch_add(1, Ordering::Relaxed);
                    tracing::debug!(error = %e, "skipping feed line");
                    continue;
                }
            };
            self.counters.lines.fetch_add(1, Ordering::Relaxed);
            if tx.send(post).await.is_err() {
                return Ok(());
            }
            self.counters.emitted.fetch_add(1, Ordering::Relaxed);
        }
    }
}

/// Reads a whole replay file synchronously, returning the posts and the
/// number of malformed lines.
pub fn read_replay<R: BufRead>(reader: R) -> std::io::Result<(Vec<PostRecord>, u64)> {
    let mut posts = Vec::new();
    let mut malformed = 0;
    for line in reader.lines() {
        match decode_line(&line?) {
            Ok(Some(p)) => posts.push(p),
            Ok(None) => {}
            Err(_) => malformed += 1,
        }
    }
    Ok((posts, malformed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(text: &str) -> PostRecord {
        PostRecord {
            post_id: "1".into(),
            created_at: "2021-06-01T00:00:00Z".parse().unwrap(),
            text: text.into(),
            media_urls: vec![],
            geo: None,
            lang: None,
            author_location: None,
        }
    }

    #[test]
    fn direct_containment() {
        assert!(matches_keywords(&post("Mudslide blocks the highway"), &KeywordSet::default()));
    }

    #[test]
    fn unrelated_text() {
        assert!(!matches_keywords(&post("Lovely beach day #sunset"), &KeywordSet::default()));
    }

    #[test]
    fn hashtag_match_agrees_with_token_scan() {
        let kw = KeywordSet::new(Vec::<&str>::new(), ["landslip"]).unwrap();
        let text = "scary scenes #LandSlip today";
        assert!(matches_keywords(&post(text), &kw));
        // brute force: every whitespace token starting with '#', stripped and lowercased
        let brute = text
            .split_whitespace()
            .filter_map(|t| t.strip_prefix('#'))
            .any(|t| t.to_lowercase() == "landslip");
        assert!(brute);
        assert!(!matches_keywords(&post("scary scenes #LandSlips today"), &kw));
        assert!(matches_keywords(&post("wow#landslip!"), &kw));
    }

    #[test]
    fn multi_word_terms_and_unicode() {
        let kw = KeywordSet::parse("rock fall\nΚΑΤΟΛΙΣΘΗΣΗ\n#: Derrumbe\n# comment line\n").unwrap();
        assert_eq!(kw.hashtag_terms(), ["derrumbe"]);
        assert!(matches_keywords(&post("Huge ROCK FALL on the road"), &kw));
        assert!(matches_keywords(&post("Κατολισθηση στην Κρήτη"), &kw));
        assert!(matches_keywords(&post("#DERRUMBE en la carretera"), &kw));
    }

    #[test]
    fn keyword_set_rejects_duplicates_and_empty() {
        assert!(KeywordSet::new(["Landslide", "landslide"], Vec::<&str>::new()).is_err());
        assert!(KeywordSet::new(Vec::<&str>::new(), Vec::<&str>::new()).is_err());
        assert!(KeywordSet::parse("\n# only comments\n").is_err());
        assert!(KeywordSet::new(["  "], Vec::<&str>::new()).is_err());
    }

    #[test]
    fn final_sigma_folds() {
        assert_eq!(casefold("ΟΔΟΣ"), casefold("οδος"));
        assert_eq!(casefold("οδος"), casefold("οδοσ"));
    }

    #[test]
    fn descriptors() {
        assert_eq!("file:///tmp/x.ndjson".parse::<FeedDescriptor>().unwrap(), FeedDescriptor::File("/tmp/x.ndjson".into()));
        assert_eq!("tcp://localhost:9000".parse::<FeedDescriptor>().unwrap(), FeedDescriptor::Tcp("localhost:9000".into()));
        assert!("tcp://localhost".parse::<FeedDescriptor>().is_err());
        assert!("http://x".parse::<FeedDescriptor>().is_err());
        assert!("file://".parse::<FeedDescriptor>().is_err());
    }

    #[test]
    fn backoff_doubles_to_cap() {
        let b = BackoffPolicy::default();
        let secs: Vec<u64> = (0..9).map(|i| b.delay(i).as_secs()).collect();
        assert_eq!(secs, [1, 2, 4, 8, 16, 32, 60, 60, 60]);
        assert_eq!(b.delay(100), Duration::from_secs(60));
    }

    #[test]
    fn decode_rejects_invalid_records() {
        let ok = r#"{"post_id":"a","created_at":"2021-06-01T10:00:00+05:45","text":"x","media_urls":["https://e.org/a.jpg"]}"#;
        let p = decode_line(ok).unwrap().unwrap();
        assert_eq!(p.created_at.to_rfc3339(), "2021-06-01T04:15:00+00:00");
        assert!(decode_line("   ").unwrap().is_none());
        for bad in [
            r#"{"post_id":"","created_at":"2021-06-01T00:00:00Z","text":"x"}"#,
            r#"{"post_id":"a","created_at":"yesterday","text":"x"}"#,
            r#"{"post_id":"a","created_at":"2021-06-01T00:00:00Z","text":"x","media_urls":["/relative.jpg"]}"#,
            r#"{"post_id":"a","created_at":"2021-06-01T00:00:00Z","text":"x","geo":{"gps":{"lat":91.0,"lon":0.0}}}"#,
            r#"{"post_id":"a","created_at":"2021-06-01T00:00:00Z""#,
        ] {
            assert!(decode_line(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn replay_counts() {
        let good = r#"{"post_id":"a","created_at":"2021-06-01T00:00:00Z","text":"x"}"#;
        let text = format!("{good}\n{{broken\n{}\n", good.replace("\"a\"", "\"b\""));
        let (posts, bad) = read_replay(text.as_bytes()).unwrap();
        assert_eq!(posts.len(), 2);
        assert_eq!(bad, 1);
        let (posts, bad) = read_replay("".as_bytes()).unwrap();
        assert!(posts.is_empty());
        assert_eq!(bad, 0);
    }

    fn flip_case(s: &str, mask: &[bool]) -> String {
        s.chars()
            .zip(mask.iter().cycle())
            .map(|(c, &up)| {
                let mut u = c.to_uppercase();
                match (up, u.next(), u.next()) {
                    (true, Some(x), None) if casefold(&x.to_string()) == casefold(&c.to_string()) => x,
                    _ => c,
                }
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matching_ignores_letter_case(
            text in "[a-zA-Z #àéöΣσςΚκ]{0,40}",
            mask in proptest::collection::vec(any::<bool>(), 1..8),
        ) {
            let kw = KeywordSet::new(["slide", "κα", "éö"], ["rock", "σς"]).unwrap();
            let a = matches_keywords(&post(&text), &kw);
            let b = matches_keywords(&post(&flip_case(&text, &mask)), &kw);
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, matches_keywords(&post(&text), &kw));
        }
    }
}
