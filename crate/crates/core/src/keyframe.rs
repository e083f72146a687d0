//! Keyframe sampling by thresholded inter-frame histogram similarity.
//!
//! A frame joins the keyframe set when its color histogram intersection with
//! the comparison frame drops below `theta`. Frame 0 is always kept.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THETA: f64 = 0.85;
pub const DEFAULT_BINS_PER_CHANNEL: usize = 64;

const CHANNELS: usize = 3;
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Raw encoded image bytes as they came off disk (or as produced by
/// [`Frame::encoded`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub media_type: String,
    pub bytes: Arc<Vec<u8>>,
}

/// A decoded 8-bit RGB video frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    width: u32,
    height: u32,
    pixels: Arc<Vec<u8>>,
    pub timestamp_ms: Option<i64>,
    source: Option<EncodedImage>,
}

impl Frame {
    /// Builds a frame from interleaved RGB bytes.
    pub fn from_rgb(index: usize, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "frame {index} has zero extent {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * CHANNELS;
        if pixels.len() != expected {
            return Err(Error::InvalidInput(format!(
                "frame {index}: expected {expected} RGB bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            index,
            width,
            height,
            pixels: Arc::new(pixels),
            timestamp_ms: None,
            source: None,
        })
    }

    /// A frame where every pixel has the same color.
    pub fn solid(index: usize, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let pixels = rgb.iter().copied().cycle().take(n * CHANNELS).collect();
        Self::from_rgb(index, width.max(1), height.max(1), pixels).expect("solid frame dims")
    }

    /// Decodes an encoded image, keeping the original bytes for payloads.
    pub fn decode(index: usize, media_type: &str, bytes: Vec<u8>) -> Result<Self> {
        let img = image::load_from_memory(&bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        let mut frame = Self::from_rgb(index, w, h, img.into_raw())?;
        frame.source = Some(EncodedImage {
            media_type: media_type.to_string(),
            bytes: Arc::new(bytes),
        });
        Ok(frame)
    }

    pub fn with_timestamp(mut self, ms: i64) -> Self {
        self.timestamp_ms = Some(ms);
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Encoded form of this frame. Frames read from disk return their file
    /// bytes untouched; in-memory frames are PNG-encoded.
    pub fn encoded(&self) -> Result<EncodedImage> {
        if let Some(src) = &self.source {
            return Ok(src.clone());
        }
        let img = image::RgbImage::from_raw(self.width, self.height, self.pixels.to_vec())
            .ok_or_else(|| Error::Image("pixel buffer does not match frame size".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(EncodedImage {
            media_type: "image/png".into(),
            bytes: Arc::new(out.into_inner()),
        })
    }
}

/// Per-channel normalized intensity histogram, channels concatenated R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHistogram {
    pub bins: Vec<f64>,
    pub bins_per_channel: usize,
}

impl FrameHistogram {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.bins[c * self.bins_per_channel..(c + 1) * self.bins_per_channel]
    }
}

/// Which frame a candidate is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeReference {
    /// The immediately preceding source frame.
    #[default]
    PreviousFrame,
    /// The most recently accepted keyframe.
    LastKeyframe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeConfig {
    pub theta: f64,
    pub bins_per_channel: usize,
    pub reference: KeyframeReference,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            bins_per_channel: DEFAULT_BINS_PER_CHANNEL,
            reference: KeyframeReference::PreviousFrame,
        }
    }
}

/// The sampled subset of a video, in source order.
#[derive(Debug, Clone)]
pub struct KeyframeSet {
    pub frames: Vec<Frame>,
    pub source_frame_count: usize,
}

impl KeyframeSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.index).collect()
    }

    /// At most `max` frames picked with a uniform stride, first frame kept.
    pub fn strided(&self, max: usize) -> Vec<&Frame> {
        let n = self.frames.len();
        if max == 0 || n <= max {
            return self.frames.iter().collect();
        }
        (0..max).map(|i| &self.frames[i * n / max]).collect()
    }
}

fn check_bins(bins_per_channel: usize) -> Result<()> {
    if !(2..=256).contains(&bins_per_channel) || 256 % bins_per_channel != 0 {
        return Err(Error::Config(format!(
            "bins_per_channel must be >= 2 and divide 256, got {bins_per_channel}"
        )));
    }
    Ok(())
}

pub fn compute_histogram(frame: &Frame, bins_per_channel: usize) -> Result<FrameHistogram> {
    check_bins(bins_per_channel)?;
    let width = 256 / bins_per_channel;
    let mut counts = vec![0u64; bins_per_channel * CHANNELS];
    for px in frame.pixels().chunks_exact(CHANNELS) {
        for (c, &v) in px.iter().enumerate() {
            counts[c * bins_per_channel + v as usize / width] += 1;
        }
    }
    let total = (frame.width() as u64 * frame.height() as u64) as f64;
    Ok(FrameHistogram {
        bins: counts.into_iter().map(|n| n as f64 / total).collect(),
        bins_per_channel,
    })
}

/// Histogram intersection averaged over channels, in `[0, 1]`.
pub fn histogram_similarity(a: &FrameHistogram, b: &FrameHistogram) -> Result<f64> {
    if a.bins_per_channel != b.bins_per_channel || a.bins.len() != b.bins.len() {
        return Err(Error::HistogramMismatch {
            left: a.bins.len(),
            right: b.bins.len(),
        });
    }
    let channels = a.bins.len() / a.bins_per_channel;
    let overlap: f64 = a.bins.iter().zip(&b.bins).map(|(x, y)| x.min(*y)).sum();
    Ok(overlap / channels as f64)
}

pub fn extract_keyframes(video: &[Frame], config: &KeyframeConfig) -> Result<KeyframeSet> {
    if video.is_empty() {
        return Err(Error::EmptyVideo);
    }
    if !(config.theta > 0.0 && config.theta <= 1.0) {
        return Err(Error::Config(format!("theta must lie in (0, 1], got {}", config.theta)));
    }
    let histograms = video
        .iter()
        .map(|f| compute_histogram(f, config.bins_per_channel))
        .collect::<Result<Vec<_>>>()?;

    let mut keep = vec![0usize];
    for i in 1..video.len() {
        let reference = match config.reference {
            KeyframeReference::PreviousFrame => i - 1,
            KeyframeReference::LastKeyframe => *keep.last().expect("frame 0 kept"),
        };
        if histogram_similarity(&histograms[i], &histograms[reference])? < config.theta {
            keep.push(i);
        }
    }
    Ok(KeyframeSet {
        frames: keep.into_iter().map(|i| video[i].clone()).collect(),
        source_frame_count: video.len(),
    })
}

#[derive(Debug, Deserialize)]
struct FrameTimestamps {
    frames: Vec<FrameTimestampEntry>,
}

#[derive(Debug, Deserialize)]
struct FrameTimestampEntry {
    file: String,
    timestamp_ms: i64,
}

fn media_type_for(ext: &str) -> &'static str {
    match ext {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        _ => "image/bmp",
    }
}

/// Loads a directory of numbered image files in lexicographic order. An
/// optional `frames.json` supplies `{"frames": [{"file", "timestamp_ms"}]}`.
pub fn load_frame_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut files: Vec<(String, String)> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| {
            let name = entry.file_name().to_string_lossy().into_owned();
            let ext = Path::new(&name).extension()?.to_string_lossy().to_ascii_lowercase();
            IMAGE_EXTENSIONS.contains(&ext.as_str()).then_some((name, ext))
        })
        .collect();
    files.sort();

    let timestamps = match fs::read(dir.join("frames.json")) {
        Ok(raw) => {
            let parsed: FrameTimestamps = serde_json::from_slice(&raw)?;
            parsed.frames.into_iter().map(|e| (e.file, e.timestamp_ms)).collect()
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => std::collections::HashMap::new(),
        Err(e) => return Err(e.into()),
    };

    files
        .into_iter()
        .enumerate()
        .map(|(i, (name, ext))| {
            let bytes = fs::read(dir.join(&name))?;
            let frame = Frame::decode(i, media_type_for(&ext), bytes)?;
            Ok(match timestamps.get(&name) {
                Some(&ms) => frame.with_timestamp(ms),
                None => frame,
            })
        })
        .collect()
}
