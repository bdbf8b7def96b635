//! Image resizing and per-channel normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{EncodedSample, Media, PixelGrid};

/// Per-axis resampling weights for a triangle (bilinear) filter with
/// half-pixel centres. When shrinking, the filter support widens by the
/// scale factor so every source pixel contributes.
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|i| {
            let centre = (i as f64 + 0.5) * scale;
            let lo = ((centre - support).floor().max(0.0)) as usize;
            let hi = ((centre + support).ceil() as usize).min(src);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| (1.0 - ((j as f64 + 0.5 - centre) / support).abs()).max(0.0))
                .collect();
            let total: f64 = w.iter().sum();
            for x in &mut w {
                *x /= total;
            }
            (lo, w)
        })
        .collect()
}

/// Resizes one row-major plane (`src_h` rows of `src_w`) to `dst_h x dst_w`.
pub fn resize_plane(src: &[f64], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), src_w * src_h);
    let wx = axis_weights(src_w, dst_w);
    let wy = axis_weights(src_h, dst_h);
    let mut rows = vec![0.0; src_h * dst_w];
    for y in 0..src_h {
        let line = &src[y * src_w..(y + 1) * src_w];
        for (x, (lo, w)) in wx.iter().enumerate() {
            rows[y * dst_w + x] = w.iter().enumerate().map(|(k, wk)| wk * line[lo + k]).sum();
        }
    }
    let mut out = vec![0.0; dst_h * dst_w];
    for (y, (lo, w)) in wy.iter().enumerate() {
        for x in 0..dst_w {
            out[y * dst_w + x] = w
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * rows[(lo + k) * dst_w + x])
                .sum();
        }
    }
    out
}

/// Dataset-level channel statistics on the `[0, 1]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    /// Statistics that leave `[0, 1]` pixel values unchanged.
    pub fn identity() -> Self {
        ChannelStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn from_grids<'a>(grids: impl IntoIterator<Item = &'a PixelGrid>) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for g in grids {
            for px in g.data.chunks_exact(3) {
                for c in 0..3 {
                    let v = px[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += g.width * g.height;
        }
        if n == 0 {
            return ChannelStats::identity();
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = sum[c] / n as f64;
            std[c] = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0).sqrt();
        }
        ChannelStats { mean, std }
    }
}

/// Resize target and normalization for image-like inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageEncoder {
    pub size: usize,
    pub channels: usize,
    pub stats: ChannelStats,
    /// Lower bound on the divisor used in normalization.
    pub std_floor: f64,
}

impl ImageEncoder {
    /// Resizes to `size x size` and returns the un-normalized planes on the
    /// `[0, 1]` scale, one per RGB channel.
    pub fn resize(&self, grid: &PixelGrid) -> Result<[Vec<f64>; 3]> {
        if grid.width == 0 || grid.height == 0 {
            return Err(Error::Shape("zero-area image".into()));
        }
        let plane = |c: usize| -> Vec<f64> {
            let src: Vec<f64> = grid.data.chunks_exact(3).map(|p| p[c] as f64 / 255.0).collect();
            resize_plane(&src, grid.width, grid.height, self.size, self.size)
        };
        Ok([plane(0), plane(1), plane(2)])
    }

    pub fn encode(&self, grid: &PixelGrid, media: Media, label: usize) -> Result<EncodedSample> {
        let planes = self.resize(grid)?;
        let n = self.size * self.size;
        let norm = |c: usize, v: f64| (v - self.stats.mean[c]) / self.stats.std[c].max(self.std_floor);
        let data: Vec<f32> = match self.channels {
            3 => (0..3)
                .flat_map(|c| planes[c].iter().map(move |&v| norm(c, v) as f32))
                .collect(),
            1 => (0..n)
                .map(|i| {
                    let g: f64 = (0..3).map(|c| norm(c, planes[c][i])).sum::<f64>() / 3.0;
                    g as f32
                })
                .collect(),
            other => {
                return Err(Error::Config(format!(
                    "image encoder supports 1 or 3 channels, not {other}"
                )))
            }
        };
        EncodedSample::new(self.size, self.channels, data, media, label)
    }
}
