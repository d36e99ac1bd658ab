//! A raster of per-pixel covariance matrices.

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;

/// Diagonal loading added to every pixel before fitting.
pub const DIAGONAL_JITTER: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct PolsarImage {
    width: usize,
    height: usize,
    pixels: Vec<HermitianMatrix>,
}

impl PolsarImage {
    /// Pixels are stored row-major, `index = y * width + x`.
    pub fn new(width: usize, height: usize, pixels: Vec<HermitianMatrix>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain("image must have positive width and height"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch { left: pixels.len(), right: width * height });
        }
        let dim = pixels[0].dim();
        if let Some(bad) = pixels.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch { left: bad.dim(), right: dim });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pixels[0].dim()
    }

    pub fn pixels(&self) -> &[HermitianMatrix] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> &HermitianMatrix {
        &self.pixels[y * self.width + x]
    }

    /// Copy with `eps` added to every diagonal entry.
    pub fn jittered(&self, eps: f64) -> Self {
        Self { width: self.width, height: self.height, pixels: self.pixels.iter().map(|p| p.jitter(eps)).collect() }
    }

    /// Every pixel multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        Self { width: self.width, height: self.height, pixels: self.pixels.iter().map(|p| p.scale(t)).collect() }
    }
}
