use serde::{Deserialize, Serialize};

use super::PerceptionError;

/// Crop rectangle in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl RelBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, PerceptionError> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(r: [f64; 4]) -> Result<Self, PerceptionError> {
        Self::new(r[0], r[1], r[2], r[3])
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if ![self.x_min, self.y_min, self.x_max, self.y_max].into_iter().all(unit) {
            return Err(PerceptionError::InvalidBox(format!("{self:?} has a component outside [0,1]")));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(PerceptionError::InvalidBox(format!("{self:?} has min >= max")));
        }
        Ok(())
    }
}

/// Crop rectangle in absolute pixels, half-open on the max edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl PixelBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, PerceptionError> {
        if x_min >= x_max || y_min >= y_max {
            return Err(PerceptionError::DegenerateBox);
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.x_max <= width && self.y_max <= height
    }

    pub fn center_x(&self) -> f64 {
        (f64::from(self.x_min) + f64::from(self.x_max)) / 2.0
    }
}

fn scale(v: f64, extent: u32) -> u32 {
    // round half up, then clamp into [0, extent]
    let scaled = (v * f64::from(extent) + 0.5).floor();
    scaled.clamp(0.0, f64::from(extent)) as u32
}

/// Map a normalized box onto a `width`×`height` image.
pub fn to_absolute(r: &RelBox, width: u32, height: u32) -> Result<PixelBox, PerceptionError> {
    r.validate()?;
    if width == 0 || height == 0 {
        return Err(PerceptionError::InvalidArgument(format!("image size {width}x{height}")));
    }
    PixelBox::new(scale(r.x_min, width), scale(r.y_min, height), scale(r.x_max, width), scale(r.y_max, height))
}

pub fn to_relative(p: &PixelBox, width: u32, height: u32) -> RelBox {
    let (w, h) = (f64::from(width), f64::from(height));
    RelBox {
        x_min: f64::from(p.x_min) / w,
        y_min: f64::from(p.y_min) / h,
        x_max: f64::from(p.x_max) / w,
        y_max: f64::from(p.y_max) / h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_direct_examples() {
        let full = RelBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(to_absolute(&full, 800, 600).unwrap(), PixelBox::new(0, 0, 800, 600).unwrap());
        let r = RelBox::new(0.25, 0.5, 0.75, 0.9).unwrap();
        assert_eq!(to_absolute(&r, 1000, 400).unwrap(), PixelBox::new(250, 200, 750, 360).unwrap());
    }

    #[test]
    fn invalid_and_degenerate() {
        assert!(matches!(RelBox::new(0.3, 0.0, 0.3, 1.0), Err(PerceptionError::InvalidBox(_))));
        assert!(RelBox::new(-0.1, 0.0, 0.5, 1.0).is_err());
        assert!(RelBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        let thin = RelBox::new(0.50, 0.0, 0.501, 1.0).unwrap();
        assert_eq!(to_absolute(&thin, 10, 10), Err(PerceptionError::DegenerateBox));
    }

    #[test]
    fn half_rounds_up() {
        let r = RelBox::new(0.05, 0.15, 0.25, 0.35).unwrap();
        // 0.05*10 = 0.5 -> 1, 0.25*10 = 2.5 -> 3
        assert_eq!(to_absolute(&r, 10, 10).unwrap(), PixelBox::new(1, 2, 3, 4).unwrap());
    }

    fn relbox() -> impl Strategy<Value = RelBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)
            .prop_filter_map("non-empty", |(a, b, c, d)| RelBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).ok())
    }

    proptest! {
        #[test]
        fn round_trip_within_one_pixel(r in relbox(), w in 1u32..4000, h in 1u32..4000) {
            if let Ok(p) = to_absolute(&r, w, h) {
                prop_assert!(p.fits(w, h));
                let back = to_relative(&p, w, h);
                let tol = 1.0 / f64::from(w.min(h));
                prop_assert!((back.x_min - r.x_min).abs() <= tol);
                prop_assert!((back.y_min - r.y_min).abs() <= tol);
                prop_assert!((back.x_max - r.x_max).abs() <= tol);
                prop_assert!((back.y_max - r.y_max).abs() <= tol);
            }
        }
    }
}
