//! Cross-media common-representation learning and retrieval.
//!
//! Images, texts, videos and audio clips are preprocessed into one uniform
//! grid shape, embedded by a single shared network trained with
//! classification, center and quadruplet ranking constraints, and retrieved
//! by cosine similarity. Mean average precision over the twelve
//! bi-modality and four multi-modality tasks measures the result.

pub mod config;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod media;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod retrieval;
pub mod sampler;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use media::{EncodedSample, Media, MediaInstance, Payload, PixelGrid, Waveform};
