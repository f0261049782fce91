use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Symmetric Hann window, `w[k] = 0.5 (1 - cos(2πk / (n - 1)))`.
pub fn make_hann(frame_len: usize) -> Result<Vec<f64>> {
    if frame_len < 2 {
        return Err(Error::config(format!(
            "hann window needs at least 2 points, got {frame_len}"
        )));
    }
    let denom = (frame_len - 1) as f64;
    Ok((0..frame_len)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / denom).cos()))
        .collect())
}
