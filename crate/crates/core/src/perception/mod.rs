//! Image-crop geometry, panorama stitching, bearings and local geodesy, plus
//! the refine-or-answer loop and candidate-window search against an abstract
//! vision backend.

mod geo;
mod geometry;
mod panorama;
mod raster;
mod streetview;
mod vision;

use thiserror::Error;

pub use geo::{displace, normalize_heading, normalize_lon, GeoPose, EARTH_RADIUS_M, POLE_LIMIT_DEG};
pub use geometry::{to_absolute, to_relative, PixelBox, RelBox};
pub use panorama::{bearing_at_x, bearing_from_crop, stitch_panorama, Panorama, TILE_COUNT};
pub use raster::Raster;
pub use streetview::{SimulatedStreetView, TileSpec, WorldFile, WorldLocation};
pub use vision::{
    candidate_windows, locate_target, refine_image, CropStep, LocateResult, RefineResult, RefineStatus, ScriptedVision,
    VisionBackend, VisionReply, VisionRequest, VisionTask, DEFAULT_MAX_DEPTH, LOCATE_PARALLELISM, WINDOW_COUNT,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("rounding collapses the box to zero area")]
    DegenerateBox,
    #[error("tile mismatch: {0}")]
    TileMismatch(String),
    #[error("latitude {lat} is too close to a pole for local displacement")]
    PoleProximity { lat: f64 },
    #[error("box lies outside the {width}x{height} composite")]
    BoxOutOfBounds { width: u32, height: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image is empty")]
    EmptyImage,
    #[error("vision backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("unexpected vision reply: {0}")]
    UnexpectedReply(String),
    #[error("no imagery at ({lat:.5}, {lon:.5}) heading {heading}")]
    NoImagery { lat: f64, lon: f64, heading: u32 },
    #[error("world file: {0}")]
    World(String),
}
