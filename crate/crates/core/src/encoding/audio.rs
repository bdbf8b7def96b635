//! Log-magnitude STFT spectrograms resized to the uniform grid.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::encoding::image::resize_plane;
use crate::error::{Error, Result};
use crate::media::{EncodedSample, Media, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window: 1024,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.hop == 0 {
            return Err(Error::Config(format!(
                "STFT window must be >= 2 and hop >= 1 (got {} / {})",
                self.window, self.hop
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }
}

/// Time-frequency magnitudes, `data[bin * frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.frames + frame]
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a reflected extension of a length-`n` signal (no edge repeat),
/// valid for any offset, including signals shorter than the pad.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centred STFT with reflect padding of `window / 2` on both sides; returns
/// `log(1 + |X|)` per bin and frame.
pub fn stft_log_magnitude(samples: &[f32], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Shape("empty waveform".into()));
    }
    let n = samples.len();
    let half = (cfg.window / 2) as isize;
    let frames = 1 + n / cfg.hop;
    let bins = cfg.bins();
    let window = hann(cfg.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.window);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window];
    let mut data = vec![0.0; bins * frames];
    for f in 0..frames {
        let start = (f * cfg.hop) as isize - half;
        for (k, slot) in buf.iter_mut().enumerate() {
            let s = samples[reflect_index(start + k as isize, n)] as f64;
            *slot = Complex::new(s * window[k], 0.0);
        }
        fft.process(&mut buf);
        for (b, c) in buf.iter().take(bins).enumerate() {
            data[b * frames + f] = c.norm().ln_1p();
        }
    }
    Ok(Spectrogram { bins, frames, data })
}

/// Audio front end: spectrogram resized to `size x size`, replicated over
/// the configured channel count. Row 0 is the DC bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioEncoder {
    pub size: usize,
    pub channels: usize,
    pub stft: StftConfig,
}

impl AudioEncoder {
    pub fn encode(&self, wave: &Waveform, label: usize) -> Result<EncodedSample> {
        let spec = stft_log_magnitude(&wave.samples, &self.stft)?;
        let plane = resize_plane(&spec.data, spec.frames, spec.bins, self.size, self.size);
        let data: Vec<f32> = (0..self.channels)
            .flat_map(|_| plane.iter().map(|&v| v as f32))
            .collect();
        EncodedSample::new(self.size, self.channels, data, Media::Audio, label)
    }
}
