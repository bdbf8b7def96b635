use crate::error::{Error, Result};

/// Uniformly spaced frame indices `floor(i * n / k)` for `i in 0..k`.
/// Indices repeat when the video has fewer than `k` frames.
pub fn sample_frames(n: usize, k: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Shape("video has no frames".into()));
    }
    if k == 0 {
        return Err(Error::Config("frame count must be positive".into()));
    }
    Ok((0..k).map(|i| i * n / k).collect())
}
