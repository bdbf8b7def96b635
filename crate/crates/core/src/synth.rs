//! Seeded multi-media toy datasets.
//!
//! Each class has a latent prototype. An instance perturbs its class
//! prototype, adds a fixed per-media offset (the heterogeneity gap) and is
//! rendered through a media-specific transform: grating patterns for
//! images, jittered copies of those for video frames, sine mixtures for
//! audio and keyword sentences for text.

use std::f64::consts::TAU;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{Media, MediaInstance, Payload, PixelGrid, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_media_per_class: usize,
    /// Standard deviation of the per-instance latent perturbation; also
    /// scales pixel noise, audio noise, frame jitter and text filler.
    pub noise: f64,
    /// Length of each media's latent offset.
    pub gap: f64,
    /// Norm of every class prototype.
    pub separation: f64,
    /// Seeds prototypes and media offsets.
    pub seed: u64,
    /// Seeds per-instance variation; a different value gives a fresh
    /// sample of the same classes.
    pub instance_seed: u64,
    pub latent_dim: usize,
    pub image_size: usize,
    pub frames: usize,
    pub sample_rate: u32,
    pub audio_samples: usize,
    pub text_words: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 3,
            per_media_per_class: 40,
            noise: 0.3,
            gap: 0.5,
            separation: 2.0,
            seed: 7,
            instance_seed: 0,
            latent_dim: 6,
            image_size: 32,
            frames: 4,
            sample_rate: 8000,
            audio_samples: 4096,
            text_words: 16,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.classes == 0 || self.per_media_per_class == 0 {
            return fail("class count and instances per class must be at least 1");
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return fail("separation must be positive");
        }
        if !(self.noise >= 0.0) || !(self.gap >= 0.0) || !self.noise.is_finite() || !self.gap.is_finite() {
            return fail("noise and gap must be finite and non-negative");
        }
        if self.latent_dim == 0 || self.image_size < 4 || self.frames == 0 || self.text_words == 0 {
            return fail("latent dim, frames and text words must be positive and images at least 4x4");
        }
        if self.sample_rate < 1000 || self.audio_samples == 0 {
            return fail("audio needs a sample rate of at least 1 kHz and samples");
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        4 * self.classes * self.per_media_per_class
    }
}

/// Words rendered for the positive and negative end of each latent axis.
const AXIS_WORDS: [[&str; 2]; 12] = [
    ["amber", "umbra"],
    ["brisk", "dolor"],
    ["crest", "fjord"],
    ["gleam", "hollow"],
    ["juniper", "kestrel"],
    ["lumen", "marsh"],
    ["nectar", "onyx"],
    ["pique", "quartz"],
    ["russet", "sable"],
    ["thorn", "vesper"],
    ["willow", "yarrow"],
    ["zephyr", "ebony"],
];

const FILLER: [&str; 12] = [
    "the", "a", "of", "and", "with", "its", "on", "near", "has", "small", "bird", "seen",
];

fn axis_word(p: usize, positive: bool) -> String {
    let base = AXIS_WORDS[p % AXIS_WORDS.len()][usize::from(!positive)];
    if p < AXIS_WORDS.len() {
        base.to_string()
    } else {
        format!("{base}{}", p / AXIS_WORDS.len())
    }
}

/// Latent prototypes and per-media offsets derived from a spec.
#[derive(Debug, Clone)]
pub struct Latents {
    /// `classes x latent_dim`.
    pub prototypes: Vec<Vec<f64>>,
    /// Indexed by [`Media::index`].
    pub offsets: [Vec<f64>; 4],
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn scaled_unit(mut v: Vec<f64>, len: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x *= len / n);
    v
}

impl Latents {
    pub fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let p = spec.latent_dim;
        let mut protos: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        for _ in 0..spec.classes {
            let mut v = gaussian(&mut rng, p);
            // Orthogonalize while there is room so prototypes are spread out.
            if protos.len() < p {
                for q in &protos {
                    let qn: f64 = q.iter().map(|x| x * x).sum();
                    let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot / qn * b);
                }
            }
            protos.push(scaled_unit(v, spec.separation));
        }
        let offsets = [0, 1, 2, 3].map(|_| scaled_unit(gaussian(&mut rng, p), spec.gap));
        Latents {
            prototypes: protos,
            offsets,
        }
    }
}

/// Spatial frequency, phase and channel mix of each latent axis.
fn grating(p: usize) -> (f64, f64, f64, [f64; 3]) {
    const DIRS: [(f64, f64); 8] = [
        (1.0, 0.0),
        (0.0, 1.0),
        (1.0, 1.0),
        (1.0, -1.0),
        (2.0, 0.0),
        (0.0, 2.0),
        (2.0, 1.0),
        (1.0, 2.0),
    ];
    let (kx, ky) = DIRS[p % DIRS.len()];
    let scale = 1.0 + (p / DIRS.len()) as f64;
    let mut mix = [0.35; 3];
    mix[p % 3] = 1.0;
    (kx * scale, ky * scale, 0.7 * p as f64, mix)
}

/// Renders a latent vector as an RGB grating, circularly shifted by
/// `(dx, dy)` pixels, with additive pixel noise.
pub fn render_image(u: &[f64], size: usize, shift: (usize, usize), pixel_noise: f64, rng: &mut ChaCha8Rng) -> PixelGrid {
    let norm = 1.0 / (u.len() as f64).sqrt();
    let gratings: Vec<_> = (0..u.len()).map(grating).collect();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (sx, sy) = (((x + shift.0) % size) as f64, ((y + shift.1) % size) as f64);
            let mut px = [0.0f64; 3];
            for (up, (kx, ky, phase, mix)) in u.iter().zip(&gratings) {
                let g = (TAU * (kx * sx + ky * sy) / size as f64 + phase).cos() * up * norm;
                for c in 0..3 {
                    px[c] += g * mix[c];
                }
            }
            for v in px {
                let n = if pixel_noise > 0.0 {
                    pixel_noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                data.push((128.0 + 40.0 * v + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    PixelGrid {
        width: size,
        height: size,
        data,
    }
}

/// Axis frequencies spread over the usable band.
fn axis_frequency(p: usize, dims: usize, sample_rate: u32) -> f64 {
    let nyquist = sample_rate as f64 / 2.0;
    nyquist * (p + 1) as f64 / (dims + 2) as f64
}

/// Sine mixture whose per-axis amplitude grows with the latent value.
pub fn render_audio(u: &[f64], sample_rate: u32, samples: usize, noise: f64, rng: &mut ChaCha8Rng) -> Waveform {
    let amps: Vec<f64> = u.iter().map(|v| 0.25 * (1.0 + v.tanh())).collect();
    let freqs: Vec<f64> = (0..u.len()).map(|p| axis_frequency(p, u.len(), sample_rate)).collect();
    let sr = sample_rate as f64;
    let out = (0..samples)
        .map(|n| {
            let t = n as f64 / sr;
            let mut s = 0.0;
            for (p, (a, f)) in amps.iter().zip(&freqs).enumerate() {
                s += a * (TAU * f * t + 0.9 * p as f64).sin();
            }
            s /= u.len() as f64;
            if noise > 0.0 {
                s += 0.05 * noise * rng.sample::<f64, _>(StandardNormal);
            }
            s.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Waveform {
        sample_rate,
        samples: out,
    }
}

/// Keyword sentence: each word names a latent axis (drawn in proportion
/// to its squared value) and its sign, or is filler.
pub fn render_text(u: &[f64], words: usize, noise: f64, rng: &mut ChaCha8Rng) -> String {
    let weights: Vec<f64> = u.iter().map(|v| v * v).collect();
    let total: f64 = weights.iter().sum();
    let filler_rate = (0.2 + 0.5 * noise).min(0.8);
    let mut out: Vec<String> = Vec::with_capacity(words);
    for _ in 0..words {
        if total <= 0.0 || rng.random::<f64>() < filler_rate {
            out.push(FILLER.choose(rng).unwrap().to_string());
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut p = 0;
        while p + 1 < weights.len() && r >= weights[p] {
            r -= weights[p];
            p += 1;
        }
        out.push(axis_word(p, u[p] >= 0.0));
    }
    out.join(" ")
}

/// Generates `4 * classes * per_media_per_class` instances, ordered by
/// media, then class, then index.
pub fn generate(spec: &SynthSpec) -> Result<Vec<MediaInstance>> {
    spec.validate()?;
    let latents = Latents::new(spec);
    let n = spec.per_media_per_class;
    let jobs: Vec<(Media, usize, usize)> = Media::ALL
        .iter()
        .flat_map(|&m| (0..spec.classes).flat_map(move |y| (0..n).map(move |i| (m, y, i))))
        .collect();
    Ok(jobs
        .into_par_iter()
        .enumerate()
        .map(|(k, (media, label, i))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ spec.instance_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.set_stream(k as u64 + 1);
            let offset = &latents.offsets[media.index()];
            let eps = gaussian(&mut rng, spec.latent_dim);
            let u: Vec<f64> = latents.prototypes[label]
                .iter()
                .zip(offset)
                .zip(&eps)
                .map(|((z, o), e)| z + o + spec.noise * e)
                .collect();
            let pixel_noise = 20.0 * spec.noise;
            let payload = match media {
                Media::Image => Payload::Image(render_image(&u, spec.image_size, (0, 0), pixel_noise, &mut rng)),
                Media::Video => {
                    let reach = (4.0 * spec.noise).round() as usize;
                    let frames = (0..spec.frames)
                        .map(|_| {
                            let jitter = gaussian(&mut rng, spec.latent_dim);
                            let uf: Vec<f64> = u.iter().zip(&jitter).map(|(a, j)| a + 0.3 * spec.noise * j).collect();
                            let shift = if reach > 0 {
                                (rng.random_range(0..=reach), rng.random_range(0..=reach))
                            } else {
                                (0, 0)
                            };
                            render_image(&uf, spec.image_size, shift, pixel_noise, &mut rng)
                        })
                        .collect();
                    Payload::Video(frames)
                }
                Media::Audio => Payload::Audio(render_audio(
                    &u,
                    spec.sample_rate,
                    spec.audio_samples,
                    spec.noise,
                    &mut rng,
                )),
                Media::Text => Payload::Text(render_text(&u, spec.text_words, spec.noise, &mut rng)),
            };
            MediaInstance {
                id: format!("{}_c{label}_{i:03}", media.name()),
                media,
                label,
                payload,
            }
        })
        .collect())
}
