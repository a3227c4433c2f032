use serde::{Deserialize, Serialize};

use super::PerceptionError;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Local displacement is refused at or beyond this absolute latitude.
pub const POLE_LIMIT_DEG: f64 = 89.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPose {
    pub lat: f64,
    pub lon: f64,
    pub heading: f64,
}

pub fn normalize_heading(h: f64) -> f64 {
    let n = h.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if n >= 360.0 {
        0.0
    } else {
        n
    }
}

/// Longitude in (-180, 180].
pub fn normalize_lon(lon: f64) -> f64 {
    let n = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if n <= -180.0 {
        n + 360.0
    } else {
        n
    }
}

impl GeoPose {
    pub fn new(lat: f64, lon: f64, heading: f64) -> Result<Self, PerceptionError> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(PerceptionError::InvalidArgument(format!("latitude {lat}")));
        }
        if !lon.is_finite() || !heading.is_finite() {
            return Err(PerceptionError::InvalidArgument(format!("lon {lon} / heading {heading}")));
        }
        Ok(Self { lat, lon: normalize_lon(lon), heading: normalize_heading(heading) })
    }
}

/// Move `distance` meters along compass `bearing` on a locally flat earth.
///
/// The longitude step uses the cosine of the path's mean latitude, so a move
/// followed by the reverse move lands back on the start exactly (up to
/// floating point).
pub fn displace(pose: &GeoPose, distance: f64, bearing: f64) -> Result<GeoPose, PerceptionError> {
    if !(distance.is_finite() && distance >= 0.0) || !bearing.is_finite() {
        return Err(PerceptionError::InvalidArgument(format!("distance {distance}, bearing {bearing}")));
    }
    if pose.lat.abs() >= POLE_LIMIT_DEG {
        return Err(PerceptionError::PoleProximity { lat: pose.lat });
    }
    if distance == 0.0 {
        return Ok(*pose);
    }
    let beta = bearing.to_radians();
    let phi0 = pose.lat.to_radians();
    let dphi = distance * beta.cos() / EARTH_RADIUS_M;
    let mid = phi0 + dphi / 2.0;
    let dlambda = distance * beta.sin() / (EARTH_RADIUS_M * mid.cos());
    let lat = (phi0 + dphi).to_degrees();
    if lat.abs() >= 90.0 {
        return Err(PerceptionError::PoleProximity { lat });
    }
    Ok(GeoPose { lat, lon: normalize_lon(pose.lon + dlambda.to_degrees()), heading: pose.heading })
}
