use serde::{Deserialize, Serialize};

use super::geo::normalize_heading;
use super::{PerceptionError, PixelBox, Raster};

pub const TILE_COUNT: usize = 4;

/// Four tiles at 90° spacing, concatenated left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panorama {
    pub tiles: Vec<Raster>,
    pub composite: Raster,
    pub base_heading: f64,
}

impl Panorama {
    pub fn tile_width(&self) -> u32 {
        self.composite.width() / TILE_COUNT as u32
    }

    pub fn tile_heading(&self, k: usize) -> f64 {
        normalize_heading(self.base_heading + 90.0 * k as f64)
    }
}

pub fn stitch_panorama(tiles: Vec<Raster>, base_heading: f64) -> Result<Panorama, PerceptionError> {
    if tiles.len() != TILE_COUNT {
        return Err(PerceptionError::TileMismatch(format!("expected {TILE_COUNT} tiles, got {}", tiles.len())));
    }
    if !base_heading.is_finite() {
        return Err(PerceptionError::InvalidArgument(format!("base heading {base_heading}")));
    }
    let (w, h) = (tiles[0].width(), tiles[0].height());
    if tiles.iter().any(|t| (t.width(), t.height()) != (w, h)) {
        let dims: Vec<_> = tiles.iter().map(|t| format!("{}x{}", t.width(), t.height())).collect();
        return Err(PerceptionError::TileMismatch(format!("tile sizes differ: {}", dims.join(", "))));
    }
    if w == 0 || h == 0 {
        return Err(PerceptionError::EmptyImage);
    }
    let mut pixels = Vec::with_capacity(tiles.iter().map(|t| t.pixels().len()).sum());
    for y in 0..h {
        for t in &tiles {
            pixels.extend_from_slice(t.row(y));
        }
    }
    let composite = Raster::new(w * TILE_COUNT as u32, h, pixels)?;
    Ok(Panorama { tiles, composite, base_heading: normalize_heading(base_heading) })
}

/// Heading of composite column position `x` (continuous, 0 at the left edge).
pub fn bearing_at_x(pano: &Panorama, x: f64) -> f64 {
    normalize_heading(pano.base_heading + 360.0 * x / f64::from(pano.composite.width()))
}

/// Heading toward the horizontal center of `b`.
pub fn bearing_from_crop(b: &PixelBox, pano: &Panorama) -> Result<f64, PerceptionError> {
    let (w, h) = (pano.composite.width(), pano.composite.height());
    if !b.fits(w, h) {
        return Err(PerceptionError::BoxOutOfBounds { width: w, height: h });
    }
    Ok(bearing_at_x(pano, b.center_x()))
}
