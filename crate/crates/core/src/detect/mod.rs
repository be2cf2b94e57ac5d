//! Detection types, the two backend interfaces and box geometry.
//!
//! Channel one is a [`DetectorBackend`] that finds people (and possibly other
//! objects) on a whole frame. Channel two is a [`ClassifierBackend`] that labels a
//! single seat crop as holding objects or not. Both are object-safe and shared
//! behind `&dyn`/`Arc<dyn>`.

pub mod model;
pub mod oracle;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RasterImage;
use crate::seatgrid::SubImage;

/// Default IoU threshold for greedy suppression.
pub const DEFAULT_NMS_IOU: f64 = 0.5;

const BOX_EPS: f64 = 1e-9;

/// Axis-aligned box in normalized frame coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from corners, clipping to the unit square. Returns `None`
    /// when nothing of positive area remains.
    pub fn from_corners_clipped(x0: f64, y0: f64, x1: f64, y1: f64) -> Option<Self> {
        let (x0, x1) = (x0.clamp(0.0, 1.0), x1.clamp(0.0, 1.0));
        let (y0, y1) = (y0.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
        (x1 > x0 && y1 > y0 && [x0, y0, x1, y1].iter().all(|v| v.is_finite()))
            .then(|| BoundingBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
    }

    pub fn validate(&self) -> Result<()> {
        let BoundingBox { x, y, w, h } = *self;
        let finite = [x, y, w, h].iter().all(|v| v.is_finite());
        if !finite || w <= 0.0 || h <= 0.0 || x < 0.0 || y < 0.0 || x + w > 1.0 + BOX_EPS || y + h > 1.0 + BOX_EPS {
            return Err(Error::Argument(format!("invalid bounding box ({x}, {y}, {w}, {h})")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 { 0.0 } else { ix * iy }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLabel {
    Person,
    Book,
    /// Extra classes exposed by model backends.
    OtherObject,
}

impl fmt::Display for ObjectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectLabel::Person => "person",
            ObjectLabel::Book => "book",
            ObjectLabel::OtherObject => "other_object",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub label: ObjectLabel,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Objects,
    NoObjects,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub label: ClassLabel,
    pub confidence: f64,
}

/// Failure inside a backend while handling a frame.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    /// An oracle was asked about a frame it does not describe.
    #[error("oracle misuse: {0}")]
    OracleMisuse(String),
    #[error("inference failed: {0}")]
    Inference(String),
}

/// Whole-frame object detector (channel one).
///
/// Implementations must be deterministic for a fixed backend state and input and
/// return boxes that pass [`BoundingBox::validate`].
pub trait DetectorBackend: Send + Sync {
    fn detect(&self, frame: &RasterImage) -> Result<Vec<Detection>, BackendError>;

    fn descriptor(&self) -> String;

    /// Whether concurrent `detect` calls on one instance are allowed. Callers
    /// serialize access when this is false.
    fn supports_concurrent_inference(&self) -> bool {
        true
    }
}

/// Objects/no-objects classifier for one seat crop (channel two).
pub trait ClassifierBackend: Send + Sync {
    fn classify(&self, crop: &SubImage) -> Result<ClassificationResult, BackendError>;

    fn descriptor(&self) -> String;

    fn supports_concurrent_inference(&self) -> bool {
        true
    }
}

fn nms_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
}

/// Greedy per-label non-maximum suppression.
///
/// Detections are visited by descending confidence (ties by ascending `x`, then
/// `y`); one is kept iff its IoU with every kept detection of the same label is
/// below `iou_thresh`. Output is in visiting order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(nms_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.label == d.label && iou(&k.bbox, &d.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
