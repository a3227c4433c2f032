use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geo::{normalize_heading, normalize_lon};
use super::{displace, stitch_panorama, GeoPose, Panorama, PerceptionError, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TileSpec {
    Solid {
        color: [u8; 3],
    },
    /// Path to a raw RGB8 payload, relative to the world file.
    Raw {
        raw: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldLocation {
    pub lat: f64,
    pub lon: f64,
    /// Keyed by heading in whole degrees.
    pub tiles: BTreeMap<String, TileSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub tile_width: u32,
    pub tile_height: u32,
    pub locations: Vec<WorldLocation>,
}

type Key = (i64, i64, u32);

fn key(lat: f64, lon: f64, heading: f64) -> Key {
    let q = |v: f64| (v * 1e5).round() as i64;
    let h = normalize_heading(heading.round()) as u32;
    (q(lat), q(normalize_lon(lon)), h % 360)
}

/// Offline street-level imagery keyed by position (to 1e-5°) and heading.
#[derive(Debug, Clone, Default)]
pub struct SimulatedStreetView {
    tiles: BTreeMap<Key, Raster>,
}

impl SimulatedStreetView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, PerceptionError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PerceptionError::World(format!("{}: {e}", path.display())))?;
        let world: WorldFile = serde_json::from_str(&text).map_err(|e| PerceptionError::World(e.to_string()))?;
        Self::from_world(&world, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_world(world: &WorldFile, base_dir: &Path) -> Result<Self, PerceptionError> {
        let mut sv = Self::new();
        for loc in &world.locations {
            for (heading, spec) in &loc.tiles {
                let h: f64 =
                    heading.parse().map_err(|_| PerceptionError::World(format!("bad heading key {heading:?}")))?;
                let raster = match spec {
                    TileSpec::Solid { color } => Raster::solid(world.tile_width, world.tile_height, *color),
                    TileSpec::Raw { raw } => {
                        let p = base_dir.join(raw);
                        let bytes =
                            std::fs::read(&p).map_err(|e| PerceptionError::World(format!("{}: {e}", p.display())))?;
                        Raster::new(world.tile_width, world.tile_height, bytes)?
                    }
                };
                sv.insert(loc.lat, loc.lon, h, raster);
            }
        }
        Ok(sv)
    }

    pub fn insert(&mut self, lat: f64, lon: f64, heading: f64, tile: Raster) {
        self.tiles.insert(key(lat, lon, heading), tile);
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tile(&self, lat: f64, lon: f64, heading: f64) -> Result<&Raster, PerceptionError> {
        let k = key(lat, lon, heading);
        self.tiles.get(&k).ok_or(PerceptionError::NoImagery { lat, lon, heading: k.2 })
    }

    /// Four tiles starting at the pose heading, stitched.
    pub fn panorama(&self, pose: &GeoPose) -> Result<Panorama, PerceptionError> {
        let tiles = (0..4)
            .map(|k| self.tile(pose.lat, pose.lon, pose.heading + 90.0 * f64::from(k)).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        stitch_panorama(tiles, pose.heading)
    }

    /// Move and look around from the new position.
    pub fn step(&self, pose: &GeoPose, distance: f64, bearing: f64) -> Result<(GeoPose, Panorama), PerceptionError> {
        let next = displace(pose, distance, bearing)?;
        let pano = self.panorama(&next)?;
        Ok((next, pano))
    }
}
