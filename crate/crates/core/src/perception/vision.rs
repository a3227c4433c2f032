use std::collections::BTreeSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{to_absolute, Panorama, PerceptionError, PixelBox, Raster, RelBox};
use crate::model::BackendError;
use crate::scheduler::{map_in_batches, MAX_BATCH_CALLS};

pub const DEFAULT_MAX_DEPTH: u32 = 3;
pub const WINDOW_COUNT: usize = 6;
pub const LOCATE_PARALLELISM: usize = MAX_BATCH_CALLS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum VisionTask {
    /// `allow_refine` is false on the answer-only call after the depth cap.
    Refine {
        depth: u32,
        allow_refine: bool,
    },
    Locate {
        window: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct VisionRequest<'a> {
    pub task: VisionTask,
    pub question: &'a str,
    pub image: &'a Raster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VisionReply {
    Answer { text: String },
    Refine { region: [f64; 4] },
    Presence { present: bool },
}

pub trait VisionBackend: Send + Sync {
    fn query(&self, req: &VisionRequest<'_>) -> Result<VisionReply, BackendError>;
}

impl<F> VisionBackend for F
where
    F: Fn(&VisionRequest<'_>) -> Result<VisionReply, BackendError> + Send + Sync,
{
    fn query(&self, req: &VisionRequest<'_>) -> Result<VisionReply, BackendError> {
        self(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Answered,
    /// The crop budget ran out; `answer` comes from the answer-only call.
    DepthExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropStep {
    pub depth: u32,
    pub region: RelBox,
    pub pixels: PixelBox,
    pub source_width: u32,
    pub source_height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub answer: Option<String>,
    pub crops: Vec<CropStep>,
    pub status: RefineStatus,
}

fn backend_err(e: BackendError) -> PerceptionError {
    PerceptionError::BackendUnavailable(e.to_string())
}

/// Ask, and while the backend requests a closer look, crop and ask again on
/// the fragment. Each crop is relative to the previous fragment.
pub fn refine_image(
    image: &Raster,
    question: &str,
    vlm: &dyn VisionBackend,
    max_depth: u32,
) -> Result<RefineResult, PerceptionError> {
    if image.is_empty() {
        return Err(PerceptionError::EmptyImage);
    }
    if max_depth == 0 {
        return Err(PerceptionError::InvalidArgument("max_depth must be at least 1".into()));
    }
    let mut current = image.clone();
    let mut crops = Vec::new();
    for depth in 0..max_depth {
        let req = VisionRequest { task: VisionTask::Refine { depth, allow_refine: true }, question, image: &current };
        match vlm.query(&req).map_err(backend_err)? {
            VisionReply::Answer { text } => {
                return Ok(RefineResult { answer: Some(text), crops, status: RefineStatus::Answered })
            }
            VisionReply::Refine { region } => {
                let rel = RelBox::from_array(region)?;
                let pixels = to_absolute(&rel, current.width(), current.height())?;
                crops.push(CropStep {
                    depth,
                    region: rel,
                    pixels,
                    source_width: current.width(),
                    source_height: current.height(),
                });
                current = current.crop(&pixels)?;
            }
            other => return Err(PerceptionError::UnexpectedReply(format!("{other:?} during refinement"))),
        }
    }
    let req =
        VisionRequest { task: VisionTask::Refine { depth: max_depth, allow_refine: false }, question, image: &current };
    let answer = match vlm.query(&req).map_err(backend_err)? {
        VisionReply::Answer { text } => Some(text),
        _ => None,
    };
    Ok(RefineResult { answer, crops, status: RefineStatus::DepthExceeded })
}

/// `WINDOW_COUNT` full-height windows with 50% overlap spanning the width.
pub fn candidate_windows(width: u32, height: u32) -> Vec<PixelBox> {
    let slots = WINDOW_COUNT as u64 + 1;
    let edge = |k: u64| ((2 * k * u64::from(width) + slots) / (2 * slots)) as u32;
    (0..WINDOW_COUNT as u64)
        .map(|k| {
            let x0 = edge(k).min(width.saturating_sub(1));
            let x1 = edge(k + 2).max(x0 + 1).min(width);
            PixelBox { x_min: x0, y_min: 0, x_max: x1, y_max: height }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateResult {
    pub present: bool,
    pub region: Option<PixelBox>,
    pub window: Option<usize>,
    pub windows: Vec<PixelBox>,
    pub queries: usize,
}

/// Query candidate windows in bounded parallel batches and report the first
/// window (in left-to-right order) the backend confirms.
pub fn locate_target(
    pano: &Panorama,
    description: &str,
    vlm: &dyn VisionBackend,
) -> Result<LocateResult, PerceptionError> {
    let comp = &pano.composite;
    if comp.is_empty() {
        return Err(PerceptionError::EmptyImage);
    }
    let windows = candidate_windows(comp.width(), comp.height());
    let answers = map_in_batches(
        &windows,
        LOCATE_PARALLELISM,
        |i, w| -> Result<bool, PerceptionError> {
            let crop = comp.crop(w)?;
            let req = VisionRequest { task: VisionTask::Locate { window: i }, question: description, image: &crop };
            match vlm.query(&req).map_err(backend_err)? {
                VisionReply::Presence { present } => Ok(present),
                other => Err(PerceptionError::UnexpectedReply(format!("{other:?} for window {i}"))),
            }
        },
        |r| matches!(r, Ok(true) | Err(_)),
    );
    let queries = answers.len();
    for (i, a) in answers.into_iter().enumerate() {
        if a? {
            return Ok(LocateResult { present: true, region: Some(windows[i]), window: Some(i), windows, queries });
        }
    }
    Ok(LocateResult { present: false, region: None, window: None, windows, queries })
}

/// Canned vision backend. Refinement replies are indexed by depth (the last
/// one repeats); locate confirms the listed windows.
#[derive(Debug, Default)]
pub struct ScriptedVision {
    pub refine: Vec<VisionReply>,
    pub final_answer: Option<String>,
    pub confirm_windows: BTreeSet<usize>,
    pub unavailable: bool,
    log: Mutex<Vec<VisionTask>>,
}

impl ScriptedVision {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn answering(text: impl Into<String>) -> Self {
        Self { refine: vec![VisionReply::Answer { text: text.into() }], ..Self::default() }
    }

    pub fn calls(&self) -> Vec<VisionTask> {
        self.log.lock().expect("vision log poisoned").clone()
    }
}

impl VisionBackend for ScriptedVision {
    fn query(&self, req: &VisionRequest<'_>) -> Result<VisionReply, BackendError> {
        self.log.lock().expect("vision log poisoned").push(req.task);
        if self.unavailable {
            return Err(BackendError::Unavailable("scripted vision outage".into()));
        }
        match req.task {
            VisionTask::Refine { allow_refine: false, .. } => {
                Ok(VisionReply::Answer { text: self.final_answer.clone().unwrap_or_default() })
            }
            VisionTask::Refine { depth, .. } => self
                .refine
                .get(depth as usize)
                .or(self.refine.last())
                .cloned()
                .ok_or_else(|| BackendError::NoScript(format!("no refine reply for depth {depth}"))),
            VisionTask::Locate { window } => {
                Ok(VisionReply::Presence { present: self.confirm_windows.contains(&window) })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::stitch_panorama;

    #[test]
    fn direct_answer_has_no_crops() {
        let img = Raster::solid(20, 20, [1, 2, 3]);
        let r = refine_image(&img, "what color", &ScriptedVision::answering("grey"), 3).unwrap();
        assert_eq!(r.answer.as_deref(), Some("grey"));
        assert!(r.crops.is_empty());
        assert_eq!(r.status, RefineStatus::Answered);
    }

    #[test]
    fn one_crop_finds_the_target() {
        // a red square at [60,80) x [20,40) on a 100x50 grey image
        let img = Raster::from_fn(100, 50, |x, y| {
            if (60..80).contains(&x) && (20..40).contains(&y) {
                [255, 0, 0]
            } else {
                [90, 90, 90]
            }
        });
        let vlm = |req: &VisionRequest<'_>| -> Result<VisionReply, BackendError> {
            let im = req.image;
            let red = |x, y| im.get(x, y) == [255, 0, 0];
            let all_red = (0..im.height()).all(|y| (0..im.width()).all(|x| red(x, y)));
            if all_red {
                return Ok(VisionReply::Answer { text: "red sign".into() });
            }
            let (w, h) = (f64::from(im.width()), f64::from(im.height()));
            let xs: Vec<u32> = (0..im.width()).filter(|&x| (0..im.height()).any(|y| red(x, y))).collect();
            let ys: Vec<u32> = (0..im.height()).filter(|&y| (0..im.width()).any(|x| red(x, y))).collect();
            Ok(VisionReply::Refine {
                region: [
                    f64::from(xs[0]) / w,
                    f64::from(ys[0]) / h,
                    f64::from(xs[xs.len() - 1] + 1) / w,
                    f64::from(ys[ys.len() - 1] + 1) / h,
                ],
            })
        };
        let r = refine_image(&img, "what is the sign", &vlm, 3).unwrap();
        assert_eq!(r.answer.as_deref(), Some("red sign"));
        assert_eq!(r.crops.len(), 1);
        assert_eq!(r.crops[0].pixels, PixelBox::new(60, 20, 80, 40).unwrap());
    }

    #[test]
    fn endless_refinement_hits_depth_cap() {
        let img = Raster::solid(64, 64, [0; 3]);
        let vlm = ScriptedVision {
            refine: vec![VisionReply::Refine { region: [0.25, 0.25, 0.75, 0.75] }],
            final_answer: Some("best guess".into()),
            ..ScriptedVision::default()
        };
        let r = refine_image(&img, "q", &vlm, 3).unwrap();
        assert_eq!(r.status, RefineStatus::DepthExceeded);
        assert_eq!(r.crops.len(), 3);
        assert_eq!(r.answer.as_deref(), Some("best guess"));
        let refine_calls =
            vlm.calls().iter().filter(|t| matches!(t, VisionTask::Refine { allow_refine: true, .. })).count();
        assert_eq!(refine_calls, 3);
        assert_eq!(r.crops.iter().map(|c| c.source_width).collect::<Vec<_>>(), vec![64, 32, 16]);
    }

    #[test]
    fn refine_errors() {
        let img = Raster::solid(8, 8, [0; 3]);
        let down = ScriptedVision { unavailable: true, ..ScriptedVision::default() };
        assert!(matches!(refine_image(&img, "q", &down, 3), Err(PerceptionError::BackendUnavailable(_))));
        assert!(matches!(
            refine_image(&Raster::solid(0, 0, [0; 3]), "q", &ScriptedVision::answering("x"), 3),
            Err(PerceptionError::EmptyImage)
        ));
    }

    fn blank_pano() -> Panorama {
        stitch_panorama((0..4).map(|_| Raster::solid(70, 10, [0; 3])).collect(), 0.0).unwrap()
    }

    #[test]
    fn windows_cover_with_half_overlap() {
        let ws = candidate_windows(280, 10);
        assert_eq!(ws.len(), WINDOW_COUNT);
        assert_eq!(ws[0].x_min, 0);
        assert_eq!(ws[WINDOW_COUNT - 1].x_max, 280);
        for pair in ws.windows(2) {
            assert_eq!(pair[1].x_min * 2, pair[0].x_min * 2 + pair[0].width());
        }
    }

    #[test]
    fn confirmed_window_reported() {
        let vlm = ScriptedVision { confirm_windows: [2].into(), ..ScriptedVision::default() };
        let pano = blank_pano();
        let r = locate_target(&pano, "a bus stop", &vlm).unwrap();
        assert!(r.present);
        assert_eq!(r.window, Some(2));
        assert_eq!(r.region, Some(candidate_windows(280, 10)[2]));
    }

    #[test]
    fn absent_target_queries_every_window() {
        let vlm = ScriptedVision::new();
        let r = locate_target(&blank_pano(), "a bus stop", &vlm).unwrap();
        assert!(!r.present && r.region.is_none());
        assert_eq!(r.queries, WINDOW_COUNT);
        assert_eq!(vlm.calls().len(), WINDOW_COUNT);
    }
}
