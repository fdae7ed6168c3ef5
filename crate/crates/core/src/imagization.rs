//! Raw bytes to fixed-size grayscale images, plus byte-entropy diagnostics.
//!
//! Bytes are laid out row-major, one byte per pixel, scaled into `[0, 1]`.
//! Short inputs are zero-padded and long inputs are truncated to `side * side`.

use crate::error::{Error, Result};

pub const DEFAULT_SIDE: usize = 300;
pub const MIN_SIDE: usize = 8;
pub const MIN_WINDOW: usize = 16;

/// Square grid of normalized pixel intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    side: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.side + col]
    }
}

/// Converts `data` into a `side x side` image.
pub fn bytes_to_image(data: &[u8], side: usize) -> Result<GrayImage> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if side < MIN_SIDE {
        return Err(Error::InvalidSide(side));
    }
    let area = side * side;
    let mut pixels = vec![0.0f32; area];
    for (px, &b) in pixels.iter_mut().zip(data) {
        *px = b as f32 / 255.0;
    }
    Ok(GrayImage { side, pixels })
}

/// Shannon entropy of the byte histogram, in bits per byte.
pub fn shannon_entropy(data: &[u8]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut freq = [0u64; 256];
    for &b in data {
        freq[b as usize] += 1;
    }
    let len = data.len() as f64;
    let entropy = freq
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / len;
            -p * p.log2()
        })
        .sum::<f64>();
    // -0.0 for single-symbol inputs
    Ok(entropy.clamp(0.0, 8.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub window_size: usize,
    pub entropies: Vec<f64>,
}

impl EntropyProfile {
    /// Fraction of windows whose entropy is strictly above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.entropies.is_empty() {
            return 0.0;
        }
        let hits = self.entropies.iter().filter(|&&e| e > threshold).count();
        hits as f64 / self.entropies.len() as f64
    }
}

/// Entropy of consecutive non-overlapping windows. The last window may be short.
pub fn entropy_profile(data: &[u8], window: usize) -> Result<EntropyProfile> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if window < MIN_WINDOW {
        return Err(Error::InvalidWindow(window));
    }
    let entropies = data.chunks(window).map(shannon_entropy).collect::<Result<Vec<_>>>()?;
    Ok(EntropyProfile {
        window_size: window,
        entropies,
    })
}
