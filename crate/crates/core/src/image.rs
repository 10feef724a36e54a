//! Floating-point RGB image buffer shared by the renderer, losses and I/O.

use crate::error::{Error, Result};

/// Row-major RGB image with interleaved `f64` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Copy with every channel clamped to `[0, 1]`.
    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Single channel plane `c` as a contiguous buffer.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::new(self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.set_pixel(r, self.width - 1 - c, self.pixel(r, c));
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
