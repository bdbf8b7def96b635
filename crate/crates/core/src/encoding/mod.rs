//! Media preprocessing: every media type becomes either a uniform
//! `S x S x C_in` grid or (for text) a token sequence that the trainable
//! text lift turns into one.

pub mod audio;
pub mod image;
pub mod text;
pub mod video;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::audio::{stft_log_magnitude, AudioEncoder, Spectrogram, StftConfig};
pub use self::image::{resize_plane, ChannelStats, ImageEncoder};
pub use self::text::{encode_text, position_shift, CharVocabulary, UnknownChar, DEFAULT_ALPHABET};
pub use self::video::sample_frames;

use crate::error::{Error, Result};
use crate::media::{EncodedSample, Media, MediaInstance, Payload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    pub max_len: usize,
    pub embed_dim: usize,
    pub alphabet: String,
    pub unknown: UnknownChar,
    pub fold_case: bool,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            max_len: 64,
            embed_dim: 16,
            alphabet: DEFAULT_ALPHABET.to_string(),
            unknown: UnknownChar::ZeroRow,
            fold_case: true,
        }
    }
}

impl TextConfig {
    pub fn vocabulary(&self) -> Result<CharVocabulary> {
        CharVocabulary::new(&self.alphabet, self.unknown, self.fold_case)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Side length `S` of the uniform grid.
    pub size: usize,
    /// Channel count `C_in` of the uniform grid.
    pub channels: usize,
    pub text: TextConfig,
    /// Frames drawn per video.
    pub frames_per_video: usize,
    pub stft: StftConfig,
    pub std_floor: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            size: 32,
            channels: 3,
            text: TextConfig::default(),
            frames_per_video: 25,
            stft: StftConfig::default(),
            std_floor: 1e-3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.channels == 0 {
            return Err(Error::Config("grid size and channels must be positive".into()));
        }
        if self.text.max_len == 0 || self.text.embed_dim == 0 {
            return Err(Error::Config("text max_len and embed_dim must be positive".into()));
        }
        if self.frames_per_video == 0 {
            return Err(Error::Config("frames_per_video must be positive".into()));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::Config("std_floor must be positive".into()));
        }
        self.stft.validate()?;
        self.text.vocabulary().map(|_| ())
    }
}

/// Model-ready form of one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedInput {
    Grid(EncodedSample),
    /// One grid per sampled video frame.
    Frames(Vec<EncodedSample>),
    /// Vocabulary indices, already truncated to the text length.
    Text(Vec<Option<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedItem {
    pub id: String,
    pub media: Media,
    pub label: usize,
    pub input: EncodedInput,
}

impl EncodedItem {
    /// Number of network inputs the item expands to.
    pub fn unit_count(&self) -> usize {
        match &self.input {
            EncodedInput::Frames(f) => f.len(),
            _ => 1,
        }
    }
}

/// Pure per-instance encoder for all four media types.
#[derive(Debug, Clone)]
pub struct MediaEncoder {
    config: EncoderConfig,
    vocab: CharVocabulary,
    image: ImageEncoder,
    audio: AudioEncoder,
}

impl MediaEncoder {
    pub fn new(config: EncoderConfig, stats: ChannelStats) -> Result<Self> {
        config.validate()?;
        let vocab = config.text.vocabulary()?;
        let image = ImageEncoder {
            size: config.size,
            channels: config.channels,
            stats,
            std_floor: config.std_floor,
        };
        let audio = AudioEncoder {
            size: config.size,
            channels: config.channels,
            stft: config.stft,
        };
        Ok(MediaEncoder {
            config,
            vocab,
            image,
            audio,
        })
    }

    /// Channel statistics over every image and video frame in `instances`.
    pub fn fit_stats(instances: &[MediaInstance]) -> ChannelStats {
        ChannelStats::from_grids(instances.iter().flat_map(|inst| match &inst.payload {
            Payload::Image(g) => std::slice::from_ref(g),
            Payload::Video(frames) => frames.as_slice(),
            _ => &[],
        }))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &CharVocabulary {
        &self.vocab
    }

    pub fn stats(&self) -> ChannelStats {
        self.image.stats
    }

    pub fn tokenize(&self, text: &str) -> Vec<Option<usize>> {
        self.vocab.tokenize(text, self.config.text.max_len)
    }

    pub fn encode(&self, inst: &MediaInstance) -> Result<EncodedItem> {
        if inst.payload.media() != inst.media {
            return Err(Error::InvalidInstance {
                id: inst.id.clone(),
                reason: "payload kind does not match media".into(),
            });
        }
        let wrap = |e: Error| match e {
            Error::Shape(reason) => Error::InvalidInstance {
                id: inst.id.clone(),
                reason,
            },
            other => other,
        };
        let input = match &inst.payload {
            Payload::Image(grid) => {
                EncodedInput::Grid(self.image.encode(grid, Media::Image, inst.label).map_err(wrap)?)
            }
            Payload::Video(frames) => {
                let idx = sample_frames(frames.len(), self.config.frames_per_video).map_err(wrap)?;
                let encoded = idx
                    .into_iter()
                    .map(|i| self.image.encode(&frames[i], Media::Video, inst.label))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                EncodedInput::Frames(encoded)
            }
            Payload::Audio(wave) => EncodedInput::Grid(self.audio.encode(wave, inst.label).map_err(wrap)?),
            Payload::Text(text) => EncodedInput::Text(self.tokenize(text)),
        };
        Ok(EncodedItem {
            id: inst.id.clone(),
            media: inst.media,
            label: inst.label,
            input,
        })
    }

    /// Encodes every instance in parallel; the output order matches the input
    /// and failures are reported per instance.
    pub fn encode_all(&self, instances: &[MediaInstance]) -> Vec<Result<EncodedItem>> {
        instances.par_iter().map(|inst| self.encode(inst)).collect()
    }
}
