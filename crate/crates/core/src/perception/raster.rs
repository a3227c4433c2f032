use serde::{Deserialize, Serialize};

use super::{PerceptionError, PixelBox};

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, PerceptionError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(PerceptionError::InvalidArgument(format!(
                "{width}x{height} RGB8 needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, pixels }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) outside {}x{}", self.width, self.height);
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let start = self.offset(0, y);
        &self.pixels[start..start + self.width as usize * 3]
    }

    pub fn crop(&self, b: &PixelBox) -> Result<Raster, PerceptionError> {
        if !b.fits(self.width, self.height) {
            return Err(PerceptionError::BoxOutOfBounds { width: self.width, height: self.height });
        }
        let mut pixels = Vec::with_capacity(b.width() as usize * b.height() as usize * 3);
        for y in b.y_min..b.y_max {
            let row = self.row(y);
            pixels.extend_from_slice(&row[b.x_min as usize * 3..b.x_max as usize * 3]);
        }
        Ok(Raster { width: b.width(), height: b.height(), pixels })
    }
}
