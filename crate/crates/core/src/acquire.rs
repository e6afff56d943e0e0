//! Image acquisition: download media from matched posts, fingerprint them
//! with a difference hash and drop near-duplicates.

use std::collections::VecDeque;
use std::time::Duration;

use bytes::Bytes;
use chrono::{DateTime, Utc};
use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PostRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContentType {
    #[serde(rename = "image/jpeg")]
    Jpeg,
    #[serde(rename = "image/png")]
    Png,
    #[serde(rename = "image/webp")]
    Webp,
}

impl ContentType {
    pub fn mime(&self) -> &'static str {
        match self {
            ContentType::Jpeg => "image/jpeg",
            ContentType::Png => "image/png",
            ContentType::Webp => "image/webp",
        }
    }

    fn format(&self) -> ImageFormat {
        match self {
            ContentType::Jpeg => ImageFormat::Jpeg,
            ContentType::Png => ImageFormat::Png,
            ContentType::Webp => ImageFormat::WebP,
        }
    }
}

/// A downloaded, decodable image. `phash` is computed once from the decoded
/// pixels when the record is built.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub source_post: String,
    pub bytes: Bytes,
    pub content_type: ContentType,
    pub phash: u64,
    pub fetched_at: DateTime<Utc>,
}

impl ImageRecord {
    pub fn image_id(post_id: &str, media_index: usize) -> String {
        format!("{post_id}#{media_index}")
    }

    /// Decodes `bytes`, hashes the pixels and builds the record.
    pub fn from_bytes(
        image_id: String,
        source_post: String,
        bytes: Bytes,
        fetched_at: DateTime<Utc>,
    ) -> Result<Self, DecodeError> {
        let (content_type, gray) = decode_gray(&bytes)?;
        Ok(Self { image_id, source_post, bytes, content_type, phash: perceptual_hash(&gray), fetched_at })
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("empty payload")]
    Empty,
    #[error("unsupported image format")]
    Unsupported,
    #[error("image has zero width or height")]
    ZeroSized,
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Sniffs and decodes a JPEG, PNG or WebP payload to 8-bit grayscale.
pub fn decode_gray(bytes: &[u8]) -> Result<(ContentType, GrayImage), DecodeError> {
    if bytes.is_empty() {
        return Err(DecodeError::Empty);
    }
    let content_type = match image::guess_format(bytes).map_err(|_| DecodeError::Unsupported)? {
        ImageFormat::Jpeg => ContentType::Jpeg,
        ImageFormat::Png => ContentType::Png,
        ImageFormat::WebP => ContentType::Webp,
        _ => return Err(DecodeError::Unsupported),
    };
    let img = image::load_from_memory_with_format(bytes, content_type.format())?;
    if img.width() == 0 || img.height() == 0 {
        return Err(DecodeError::ZeroSized);
    }
    Ok((content_type, img.to_luma8()))
}

/// For each output cell along one axis, the source pixels it overlaps and
/// their weights (fractions of the cell). Integer arithmetic in units of
/// `1/dst` keeps the weights exact.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|o| {
            let (start, end) = (o * src, (o + 1) * src);
            (start / dst..end.div_ceil(dst))
                .filter_map(|s| {
                    let overlap = end.min((s + 1) * dst).saturating_sub(start.max(s * dst));
                    (overlap > 0).then(|| (s, overlap as f64 / src as f64))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resize of a grayscale image. Returns `out_h` rows of
/// `out_w` mean intensities in `[0, 255]`, row-major.
pub fn area_resize(img: &GrayImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let xw = axis_weights(w, out_w);
    let yw = axis_weights(h, out_h);

    // horizontal pass: h rows × out_w
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &raw[y * w..(y + 1) * w];
        for (ox, taps) in xw.iter().enumerate() {
            tmp[y * out_w + ox] = taps.iter().map(|&(s, wt)| row[s] as f64 * wt).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (oy, taps) in yw.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = taps.iter().map(|&(s, wt)| tmp[s * out_w + ox] * wt).sum();
        }
    }
    out
}

/// 64-bit difference hash: area-resize to 9×8, then for each row emit a 1
/// bit wherever a cell is brighter than its right neighbour. Bits are
/// row-major with the first comparison in the most significant bit.
pub fn perceptual_hash(img: &GrayImage) -> u64 {
    let cells = area_resize(img, 9, 8);
    let mut hash = 0u64;
    for row in cells.chunks_exact(9) {
        for pair in row.windows(2) {
            hash = (hash << 1) | u64::from(pair[0] > pair[1]);
        }
    }
    hash
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// True when the hashes differ in at most `threshold_bits` bits.
pub fn is_duplicate(a: u64, b: u64, threshold_bits: u32) -> bool {
    hamming(a, b) <= threshold_bits
}

/// Bounded window of recently seen hashes with least-recently-used
/// eviction. The first occurrence of an image is kept; later images within
/// `threshold_bits` of any hash in the window are duplicates.
#[derive(Debug, Clone)]
pub struct DedupWindow {
    threshold_bits: u32,
    capacity: usize,
    recent: VecDeque<u64>,
}

impl DedupWindow {
    pub const DEFAULT_THRESHOLD_BITS: u32 = 4;
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(threshold_bits: u32, capacity: usize) -> Self {
        Self {
            threshold_bits: threshold_bits.min(64),
            capacity: capacity.max(1),
            recent: VecDeque::new(),
        }
    }

    /// Returns true if `hash` duplicates something in the window. A hit
    /// refreshes the matched entry; a miss records `hash`.
    pub fn check_and_insert(&mut self, hash: u64) -> bool {
        if let Some(pos) = self.recent.iter().rposition(|&h| is_duplicate(h, hash, self.threshold_bits)) {
            let h = self.recent.remove(pos).expect("position in range");
            self.recent.push_back(h);
            return true;
        }
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(hash);
        false
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }
}

impl Default for DedupWindow {
    fn default() -> Self {
        Self::new(Self::DEFAULT_THRESHOLD_BITS, Self::DEFAULT_CAPACITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchPolicy {
    pub attempts: u32,
    pub timeout: Duration,
    pub max_bytes: u64,
    /// Pause before the second attempt; doubles on each further attempt.
    pub retry_delay: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            timeout: Duration::from_secs(10),
            max_bytes: 8 * 1024 * 1024,
            retry_delay: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    FetchFailed,
    DecodeFailed,
    TooLarge,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::FetchFailed => "fetch_failed",
            FailureReason::DecodeFailed => "decode_failed",
            FailureReason::TooLarge => "too_large",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchFailure {
    pub media_index: usize,
    pub url: String,
    pub reason: FailureReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FetchOutcome {
    pub images: Vec<ImageRecord>,
    pub failures: Vec<FetchFailure>,
}

enum AttemptError {
    Transient(String),
    Permanent(FailureReason, String),
}

#[derive(Debug, Clone)]
pub struct ImageFetcher {
    client: reqwest::Client,
    policy: FetchPolicy,
}

impl ImageFetcher {
    pub fn new(policy: FetchPolicy) -> reqwest::Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(policy.timeout)
            .connect_timeout(policy.timeout)
            .build()?;
        Ok(Self { client, policy })
    }

    pub fn policy(&self) -> &FetchPolicy {
        &self.policy
    }

    /// Downloads every media URL of `post` in order. Each URL yields either
    /// an [`ImageRecord`] with id `<post_id>#<index>` or a failure.
    pub async fn fetch_images(&self, post: &PostRecord) -> FetchOutcome {
        let mut out = FetchOutcome::default();
        for (idx, url) in post.media_urls.iter().enumerate() {
            let fail = |reason, detail: String| FetchFailure { media_index: idx, url: url.to_string(), reason, detail };
            let bytes = match self.download(url).await {
                Ok(b) => b,
                Err((reason, detail)) => {
                    tracing::debug!(%url, reason = reason.as_str(), %detail, "media skipped");
                    out.failures.push(fail(reason, detail));
                    continue;
                }
            };
            let id = ImageRecord::image_id(&post.post_id, idx);
            match ImageRecord::from_bytes(id, post.post_id.clone(), bytes, Utc::now()) {
                Ok(rec) => out.images.push(rec),
                Err(e) => out.failures.push(fail(FailureReason::DecodeFailed, e.to_string())),
            }
        }
        out
    }

    async fn download(&self, url: &url::Url) -> Result<Bytes, (FailureReason, String)> {
        if !matches!(url.scheme(), "http" | "https") {
            return Err((FailureReason::FetchFailed, format!("unsupported scheme '{}'", url.scheme())));
        }
        let mut last = String::new();
        for attempt in 0..self.policy.attempts.max(1) {
            if attempt > 0 {
                tokio::time::sleep(self.policy.retry_delay * 2u32.saturating_pow(attempt - 1)).await;
            }
            match self.attempt(url).await {
                Ok(b) => return Ok(b),
                Err(AttemptError::Permanent(reason, detail)) => return Err((reason, detail)),
                Err(AttemptError::Transient(detail)) => last = detail,
            }
        }
        Err((FailureReason::FetchFailed, last))
    }

    async fn attempt(&self, url: &url::Url) -> Result<Bytes, AttemptError> {
        let transient = |e: reqwest::Error| AttemptError::Transient(e.to_string());
        let mut resp = self.client.get(url.clone()).send().await.map_err(transient)?;
        let status = resp.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(AttemptError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Permanent(FailureReason::FetchFailed, format!("HTTP {status}")));
        }
        let cap = self.policy.max_bytes;
        let too_large = |n: u64| AttemptError::Permanent(FailureReason::TooLarge, format!("{n} bytes exceeds cap {cap}"));
        if let Some(len) = resp.content_length().filter(|&l| l > cap) {
            return Err(too_large(len));
        }
        let mut buf = Vec::new();
        while let Some(chunk) = resp.chunk().await.map_err(transient)? {
            if (buf.len() + chunk.len()) as u64 > cap {
                return Err(too_large((buf.len() + chunk.len()) as u64));
            }
            buf.extend_from_slice(&chunk);
        }
        Ok(Bytes::from(buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma};
    use proptest::prelude::*;

    fn encode_png(img: &GrayImage) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn black_image_hashes_to_zero() {
        let img = GrayImage::from_pixel(37, 23, Luma([0]));
        assert_eq!(perceptual_hash(&img), 0);
    }

    #[test]
    fn increasing_ramp_hashes_to_zero() {
        // 9×8 with strictly increasing columns: the resize is the identity
        // and every left cell is darker than its right neighbour.
        let img = ImageBuffer::from_fn(9, 8, |x, _| Luma([(x * 30) as u8]));
        assert_eq!(area_resize(&img, 9, 8)[..9], [0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0, 210.0, 240.0]);
        assert_eq!(perceptual_hash(&img), 0);
        let reversed = ImageBuffer::from_fn(9, 8, |x, _| Luma([(240 - x * 30) as u8]));
        assert_eq!(perceptual_hash(&reversed), u64::MAX);
    }

    #[test]
    fn first_row_lands_in_high_bits() {
        let img = ImageBuffer::from_fn(9, 8, |x, y| Luma([if y == 0 && x == 0 { 200 } else { 10 }]));
        assert_eq!(perceptual_hash(&img), 1 << 63);
    }

    #[test]
    fn area_weights_partition_each_cell() {
        for (src, dst) in [(10, 3), (3, 10), (9, 9), (1, 8), (640, 9)] {
            let w = axis_weights(src, dst);
            assert_eq!(w.len(), dst);
            for taps in &w {
                let sum: f64 = taps.iter().map(|t| t.1).sum();
                assert!((sum - 1.0).abs() < 1e-12, "{src}->{dst}: {sum}");
            }
        }
        // two source pixels per cell: plain pair means
        let img = ImageBuffer::from_fn(4, 1, |x, _| Luma([[10u8, 20, 30, 50][x as usize]]));
        assert_eq!(area_resize(&img, 2, 1), vec![15.0, 40.0]);
    }

    #[test]
    fn one_pixel_image_hashes() {
        let img = GrayImage::from_pixel(1, 1, Luma([77]));
        assert_eq!(perceptual_hash(&img), 0);
    }

    #[test]
    fn reencoding_preserves_hash() {
        let img = ImageBuffer::from_fn(40, 30, |x, y| Luma([((x * 7 + y * 13) % 251) as u8]));
        let png = encode_png(&img);
        let (ct, decoded) = decode_gray(&png).unwrap();
        assert_eq!(ct, ContentType::Png);
        assert_eq!(perceptual_hash(&decoded), perceptual_hash(&img));

        let rgb = image::DynamicImage::ImageLuma8(img.clone()).to_rgb8();
        let mut rgb_png = std::io::Cursor::new(Vec::new());
        rgb.write_to(&mut rgb_png, ImageFormat::Png).unwrap();
        let (_, decoded_rgb) = decode_gray(rgb_png.get_ref()).unwrap();
        assert_eq!(perceptual_hash(&decoded_rgb), perceptual_hash(&img));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(matches!(decode_gray(b""), Err(DecodeError::Empty)));
        assert!(matches!(decode_gray(b"GIF89a......"), Err(DecodeError::Unsupported)));
        assert!(decode_gray(b"hello world").is_err());
        let mut png = encode_png(&GrayImage::from_pixel(8, 8, Luma([3])));
        png.truncate(png.len() / 2);
        assert!(decode_gray(&png).is_err());
    }

    #[test]
    fn duplicate_threshold() {
        assert!(is_duplicate(0xDEAD_BEEF, 0xDEAD_BEEF, 0));
        let five = 0b1_0110_1001u64; // 5 bits set
        assert_eq!(five.count_ones(), 5);
        assert!(!is_duplicate(0, five, 4));
        assert!(is_duplicate(0, five, 5));
        assert!(is_duplicate(0, u64::MAX, 64));
    }

    #[test]
    fn window_keeps_first_and_evicts_lru() {
        let mut w = DedupWindow::new(0, 2);
        assert!(!w.check_and_insert(1));
        assert!(!w.check_and_insert(2));
        assert!(w.check_and_insert(1)); // refreshes 1
        assert!(!w.check_and_insert(3)); // evicts 2
        assert!(w.check_and_insert(1));
        assert!(!w.check_and_insert(2));
        assert_eq!(w.len(), 2);
    }

    proptest! {
        #[test]
        fn duplicate_relation_symmetric_reflexive(a in any::<u64>(), b in any::<u64>(), t in 0u32..=64) {
            prop_assert!(is_duplicate(a, a, t));
            prop_assert_eq!(is_duplicate(a, b, t), is_duplicate(b, a, t));
            prop_assert_eq!(is_duplicate(a, b, t), (a ^ b).count_ones() <= t);
        }

        #[test]
        fn replayed_sequence_is_all_duplicates(hashes in proptest::collection::vec(any::<u64>(), 0..60), t in 0u32..6) {
            let mut w = DedupWindow::new(t, 1000);
            let first: Vec<u64> = hashes.iter().copied().filter(|&h| !w.check_and_insert(h)).collect();
            let second: Vec<u64> = hashes.iter().copied().filter(|&h| !w.check_and_insert(h)).collect();
            prop_assert!(second.is_empty());
            let mut fresh = DedupWindow::new(t, 1000);
            let again: Vec<u64> = hashes.iter().copied().filter(|&h| !fresh.check_and_insert(h)).collect();
            prop_assert_eq!(first, again);
        }
    }
}
