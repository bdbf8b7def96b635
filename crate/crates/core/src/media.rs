//! Raw media instances and the uniform encoded grid every media type is
//! converted into before it reaches the shared network.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four media types handled by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Media {
    Image,
    Text,
    Video,
    Audio,
}

impl Media {
    pub const ALL: [Media; 4] = [Media::Image, Media::Text, Media::Video, Media::Audio];

    pub fn index(self) -> usize {
        match self {
            Media::Image => 0,
            Media::Text => 1,
            Media::Video => 2,
            Media::Audio => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<Media> {
        Media::ALL.get(index).copied()
    }

    /// Single-letter code used in task names (`I`, `T`, `V`, `A`).
    pub fn code(self) -> char {
        match self {
            Media::Image => 'I',
            Media::Text => 'T',
            Media::Video => 'V',
            Media::Audio => 'A',
        }
    }

    pub fn from_code(code: char) -> Option<Media> {
        match code.to_ascii_uppercase() {
            'I' => Some(Media::Image),
            'T' => Some(Media::Text),
            'V' => Some(Media::Video),
            'A' => Some(Media::Audio),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Media::Image => "image",
            Media::Text => "text",
            Media::Video => "video",
            Media::Audio => "audio",
        }
    }
}

impl fmt::Display for Media {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Media {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" | "img" | "i" => Ok(Media::Image),
            "text" | "txt" | "t" => Ok(Media::Text),
            "video" | "vid" | "v" => Ok(Media::Video),
            "audio" | "aud" | "a" => Ok(Media::Audio),
            other => Err(Error::Config(format!("unknown media type `{other}`"))),
        }
    }
}

/// An 8-bit RGB pixel grid, row-major (`height` rows of `width` pixels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, length `width * height * 3`.
    pub data: Vec<u8>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "pixel buffer of {} bytes does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(PixelGrid {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        PixelGrid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + channel]
    }
}

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

/// Media-specific raw content.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Image(PixelGrid),
    Text(String),
    /// Ordered frames.
    Video(Vec<PixelGrid>),
    Audio(Waveform),
}

impl Payload {
    pub fn media(&self) -> Media {
        match self {
            Payload::Image(_) => Media::Image,
            Payload::Text(_) => Media::Text,
            Payload::Video(_) => Media::Video,
            Payload::Audio(_) => Media::Audio,
        }
    }
}

/// One raw item with its fine-grained subcategory label.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaInstance {
    pub id: String,
    pub media: Media,
    pub label: usize,
    pub payload: Payload,
}

impl MediaInstance {
    /// Checks the instance invariants against a class count.
    pub fn validate(&self, classes: usize) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidInstance {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        if self.label >= classes {
            return fail(format!("label {} >= class count {classes}", self.label));
        }
        if self.payload.media() != self.media {
            return fail(format!(
                "payload is {} but instance is declared {}",
                self.payload.media(),
                self.media
            ));
        }
        match &self.payload {
            Payload::Image(grid) if grid.width == 0 || grid.height == 0 => {
                fail("zero-area image".into())
            }
            Payload::Video(frames) if frames.is_empty() => fail("video has no frames".into()),
            Payload::Video(frames) if frames.iter().any(|f| f.width == 0 || f.height == 0) => {
                fail("video has a zero-area frame".into())
            }
            Payload::Audio(wave) if wave.samples.is_empty() => fail("audio has no samples".into()),
            Payload::Audio(wave) if wave.sample_rate == 0 => fail("audio sample rate is 0".into()),
            _ => Ok(()),
        }
    }
}

/// The uniform network input: a `size x size x channels` real grid.
///
/// Storage is channel-major (`data[(c * size + y) * size + x]`), which is the
/// layout the convolution kernels consume directly.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub media: Media,
    pub label: usize,
}

impl EncodedSample {
    pub fn new(size: usize, channels: usize, data: Vec<f32>, media: Media, label: usize) -> Result<Self> {
        if data.len() != size * size * channels {
            return Err(Error::Shape(format!(
                "encoded grid has {} values, expected {size}x{size}x{channels}",
                data.len()
            )));
        }
        Ok(EncodedSample {
            size,
            channels,
            data,
            media,
            label,
        })
    }

    /// Shape as `(S, S, C_in)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.size, self.size, self.channels)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(c * self.size + y) * self.size + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
