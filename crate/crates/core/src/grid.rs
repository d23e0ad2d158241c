//! Row-major single-precision images.

use crate::error::{Error, Result};

/// An image with explicit dimensions. Pixels are stored row-major as `f32`;
/// pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)` in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl ImageGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{width}x{height}"),
                got: format!("{} pixels", pixels.len()),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Rounds an `f64` accumulation buffer into an image.
    pub fn from_f64(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        Self::from_vec(width, height, values.iter().map(|&v| v as f32).collect())
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

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Center coordinate of pixel `(x, y)`.
    pub fn pixel_center(x: usize, y: usize) -> [f64; 2] {
        [x as f64 + 0.5, y as f64 + 0.5]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                got: format!("{}x{}", other.width, other.height),
            })
        }
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.pixels.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ImageGrid, scale: f32) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64).collect()
    }

    pub fn max(&self) -> f32 {
        self.pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Index of the pixel whose center is nearest to `r`, clamped into the grid.
    pub fn nearest_pixel(&self, r: [f64; 2]) -> (usize, usize) {
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        (clamp(r[0], self.width), clamp(r[1], self.height))
    }

    /// One CSV row per image row.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.pixels.len() * 12);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}
