//! The serial two-channel seat decision procedure.
//!
//! ```text
//! frame ─► preprocess ─► detector ─► nms ─► persons ≥ τp ─► assign to seats
//!                                                             │
//!           seat has a person ──────────────────────────────► OccupiedByPerson
//!           otherwise: crop ─► classifier ─► Objects ≥ τo ──► SuspectedOccupancy
//!                                             else ─────────► Free
//! ```
//!
//! Seats listed as out of service are never inspected. Book boxes from the
//! detector do not influence seat states; only the classifier decides about
//! objects.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{
    BackendError, ClassLabel, ClassificationResult, ClassifierBackend, DEFAULT_NMS_IOU, Detection,
    DetectorBackend, ObjectLabel, nms,
};
use crate::error::{Error, Result};
use crate::imaging::{RasterImage, preprocess};
use crate::seatgrid::{SeatLayout, assign_detections, segment_region};

pub const DEFAULT_PERSON_THRESHOLD: f64 = 0.5;
pub const DEFAULT_OBJECTS_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeatState {
    OccupiedByPerson,
    SuspectedOccupancy,
    Free,
    OutOfService,
}

/// Seat verdict for an in-service seat: a person wins over objects.
pub fn decide_state(person: bool, objects: bool) -> SeatState {
    match (person, objects) {
        (true, _) => SeatState::OccupiedByPerson,
        (false, true) => SeatState::SuspectedOccupancy,
        (false, false) => SeatState::Free,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Minimum confidence for a person detection to occupy a seat.
    #[serde(default = "default_person_threshold")]
    pub tau_p: f64,
    /// Minimum classifier confidence for "objects" to flag a seat.
    #[serde(default = "default_objects_threshold")]
    pub tau_o: f64,
    #[serde(default = "default_nms_iou")]
    pub nms_iou: f64,
    #[serde(default)]
    pub out_of_service: BTreeSet<u32>,
}

fn default_person_threshold() -> f64 {
    DEFAULT_PERSON_THRESHOLD
}

fn default_objects_threshold() -> f64 {
    DEFAULT_OBJECTS_THRESHOLD
}

fn default_nms_iou() -> f64 {
    DEFAULT_NMS_IOU
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau_p: DEFAULT_PERSON_THRESHOLD,
            tau_o: DEFAULT_OBJECTS_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            out_of_service: BTreeSet::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_p", self.tau_p), ("tau_o", self.tau_o), ("nms_iou", self.nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeatObservation {
    pub seat_id: u32,
    pub state: SeatState,
    /// Qualifying person detections assigned to this seat.
    pub person_detections: Vec<Detection>,
    pub classification: Option<ClassificationResult>,
    pub frame_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl SeatObservation {
    pub fn person_confidence(&self) -> Option<f64> {
        self.person_detections.iter().map(|d| d.confidence).reduce(f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_id: String,
    pub room_id: String,
    /// One entry per seat, ascending seat id.
    pub observations: Vec<SeatObservation>,
    pub classifier_invocations: usize,
    pub detector_runtime_ms: f64,
    pub classifier_runtime_ms: f64,
}

impl FrameReport {
    pub fn observation(&self, seat_id: u32) -> Option<&SeatObservation> {
        self.observations.iter().find(|o| o.seat_id == seat_id)
    }

    pub fn states(&self) -> BTreeMap<u32, SeatState> {
        self.observations.iter().map(|o| (o.seat_id, o.state)).collect()
    }

    pub fn seats_in(&self, state: SeatState) -> Vec<u32> {
        self.observations.iter().filter(|o| o.state == state).map(|o| o.seat_id).collect()
    }

    /// Same report with runtimes zeroed, for comparisons across runs.
    pub fn without_timings(&self) -> FrameReport {
        FrameReport { detector_runtime_ms: 0.0, classifier_runtime_ms: 0.0, ..self.clone() }
    }

    pub fn to_document(&self, legend: &DisplayLegend) -> ReportDocument {
        ReportDocument {
            frame_id: self.frame_id.clone(),
            room_id: self.room_id.clone(),
            seats: self
                .observations
                .iter()
                .map(|o| {
                    let display = legend.display(o.state);
                    SeatEntry {
                        seat_id: o.seat_id,
                        state: o.state,
                        person_confidence: o.person_confidence(),
                        classification: o.classification.map(|c| c.label),
                        objects_confidence: o.classification.map(|c| c.confidence),
                        glyph: display.glyph,
                        color: display.color,
                    }
                })
                .collect(),
            classifier_invocations: self.classifier_invocations,
            timings: Timings {
                detector_ms: self.detector_runtime_ms,
                classifier_ms: self.classifier_runtime_ms,
            },
        }
    }
}

/// Serialized form of a [`FrameReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub frame_id: String,
    pub room_id: String,
    pub seats: Vec<SeatEntry>,
    pub classifier_invocations: usize,
    pub timings: Timings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeatEntry {
    pub seat_id: u32,
    pub state: SeatState,
    pub person_confidence: Option<f64>,
    pub classification: Option<ClassLabel>,
    pub objects_confidence: Option<f64>,
    pub glyph: Glyph,
    pub color: DisplayColor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub detector_ms: f64,
    pub classifier_ms: f64,
}

/// Identifies a frame inside reports and observations.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMeta {
    pub frame_id: String,
    pub timestamp: f64,
}

impl FrameMeta {
    pub fn new(frame_id: impl Into<String>, timestamp: f64) -> Self {
        FrameMeta { frame_id: frame_id.into(), timestamp }
    }
}

/// Which seats reach the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifyPolicy {
    /// Serial rule: only in-service seats without a person.
    PersonFreeOnly,
    /// Reference variant: every in-service seat.
    AllInService,
}

/// A report plus the post-NMS detections it was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutcome {
    pub report: FrameReport,
    pub detections: Vec<Detection>,
}

fn backend_error(frame_id: &str, err: BackendError) -> Error {
    match err {
        BackendError::OracleMisuse(msg) => Error::OracleMisuse(format!("frame {frame_id}: {msg}")),
        BackendError::Inference(msg) => Error::Backend { frame_id: frame_id.to_string(), message: msg },
    }
}

pub fn process_frame(
    frame: &RasterImage,
    layout: &SeatLayout,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    cfg: &PipelineConfig,
    meta: &FrameMeta,
) -> Result<FrameReport> {
    run_frame(frame, layout, detector, classifier, cfg, meta, ClassifyPolicy::PersonFreeOnly).map(|o| o.report)
}

pub fn run_frame(
    frame: &RasterImage,
    layout: &SeatLayout,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    cfg: &PipelineConfig,
    meta: &FrameMeta,
    policy: ClassifyPolicy,
) -> Result<FrameOutcome> {
    cfg.validate()?;
    layout.validate()?;
    let regions = layout.sorted_regions();
    for r in &regions {
        let b = r.pixel_bounds(frame.width(), frame.height());
        if b.w == 0 || b.h == 0 {
            return Err(Error::LayoutTooFine { seat_id: r.seat_id, width: frame.width(), height: frame.height() });
        }
    }
    let frame_id = meta.frame_id.as_str();
    let prepared = preprocess(frame);

    let started = Instant::now();
    let raw = detector.detect(&prepared).map_err(|e| backend_error(frame_id, e))?;
    let detector_runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    for d in &raw {
        if d.bbox.validate().is_err() || !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::Backend {
                frame_id: frame_id.to_string(),
                message: format!("{} returned an invalid detection {d:?}", detector.descriptor()),
            });
        }
    }
    let detections = nms(&raw, cfg.nms_iou);
    let persons: Vec<Detection> = detections
        .iter()
        .filter(|d| d.label == ObjectLabel::Person && d.confidence >= cfg.tau_p)
        .copied()
        .collect();
    let mut assigned = assign_detections(&persons, layout).by_seat;

    let to_classify: Vec<_> = regions
        .iter()
        .filter(|r| !cfg.out_of_service.contains(&r.seat_id))
        .filter(|r| policy == ClassifyPolicy::AllInService || !assigned.contains_key(&r.seat_id))
        .copied()
        .collect();
    let started = Instant::now();
    let classify = |region: &&crate::seatgrid::SeatRegion| -> Result<(u32, ClassificationResult)> {
        let sub = segment_region(&prepared, region)?;
        let result = classifier.classify(&sub).map_err(|e| backend_error(frame_id, e))?;
        if !(0.0..=1.0).contains(&result.confidence) {
            return Err(Error::Backend {
                frame_id: frame_id.to_string(),
                message: format!("{} returned confidence {}", classifier.descriptor(), result.confidence),
            });
        }
        Ok((region.seat_id, result))
    };
    let results: Vec<(u32, ClassificationResult)> = if classifier.supports_concurrent_inference() {
        to_classify.par_iter().map(classify).collect::<Result<_>>()?
    } else {
        to_classify.iter().map(classify).collect::<Result<_>>()?
    };
    let classifier_runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut classifications: BTreeMap<u32, ClassificationResult> = results.into_iter().collect();

    let observations = regions
        .iter()
        .map(|r| {
            let seat_id = r.seat_id;
            let base = SeatObservation {
                seat_id,
                state: SeatState::Free,
                person_detections: Vec::new(),
                classification: None,
                frame_id: meta.frame_id.clone(),
                timestamp: meta.timestamp,
            };
            if cfg.out_of_service.contains(&seat_id) {
                return SeatObservation { state: SeatState::OutOfService, ..base };
            }
            let people = assigned.remove(&seat_id).unwrap_or_default();
            let classification = classifications.remove(&seat_id);
            let objects = !people.is_empty()
                || classification.is_some_and(|c| c.label == ClassLabel::Objects && c.confidence >= cfg.tau_o);
            let state = if people.is_empty() { decide_state(false, objects) } else { SeatState::OccupiedByPerson };
            SeatObservation { state, person_detections: people, classification, ..base }
        })
        .collect();

    Ok(FrameOutcome {
        report: FrameReport {
            frame_id: meta.frame_id.clone(),
            room_id: layout.room_id.clone(),
            observations,
            classifier_invocations: to_classify.len(),
            detector_runtime_ms,
            classifier_runtime_ms,
        },
        detections,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SerialComparison {
    pub serial: FrameReport,
    pub full: FrameReport,
    /// Classifier calls avoided by the serial rule.
    pub saved: usize,
    /// Person-free seats whose verdicts differ between the two variants.
    pub mismatched: Vec<u32>,
}

impl SerialComparison {
    pub fn equivalent(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Runs the serial pipeline and the classify-everything reference on the same
/// frame.
pub fn compare_serial_vs_full(
    frame: &RasterImage,
    layout: &SeatLayout,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    cfg: &PipelineConfig,
    meta: &FrameMeta,
) -> Result<SerialComparison> {
    let serial = run_frame(frame, layout, detector, classifier, cfg, meta, ClassifyPolicy::PersonFreeOnly)?.report;
    let full = run_frame(frame, layout, detector, classifier, cfg, meta, ClassifyPolicy::AllInService)?.report;
    let mismatched = serial
        .observations
        .iter()
        .filter(|o| o.classification.is_some())
        .filter(|o| full.observation(o.seat_id).map(|f| f.state) != Some(o.state))
        .map(|o| o.seat_id)
        .collect();
    let saved = full.classifier_invocations - serial.classifier_invocations;
    Ok(SerialComparison { serial, full, saved, mismatched })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisplayColor {
    Red,
    Blue,
    Gray,
    DarkGray,
}

impl DisplayColor {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            DisplayColor::Red => [220, 40, 40],
            DisplayColor::Blue => [40, 90, 220],
            DisplayColor::Gray => [150, 150, 150],
            DisplayColor::DarkGray => [70, 70, 70],
        }
    }
}

/// Librarian grid mark: ✓ no occupancy, × held seat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Glyph {
    #[serde(rename = "✓")]
    Check,
    #[serde(rename = "×")]
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatDisplay {
    pub color: DisplayColor,
    pub glyph: Glyph,
}

/// State → colour/glyph table. The default reads blue as "a person is there"
/// and gray as "free".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayLegend {
    pub occupied_by_person: SeatDisplay,
    pub suspected_occupancy: SeatDisplay,
    pub free: SeatDisplay,
    pub out_of_service: SeatDisplay,
}

impl Default for DisplayLegend {
    fn default() -> Self {
        DisplayLegend {
            occupied_by_person: SeatDisplay { color: DisplayColor::Blue, glyph: Glyph::Check },
            suspected_occupancy: SeatDisplay { color: DisplayColor::Red, glyph: Glyph::Cross },
            free: SeatDisplay { color: DisplayColor::Gray, glyph: Glyph::Check },
            out_of_service: SeatDisplay { color: DisplayColor::DarkGray, glyph: Glyph::Check },
        }
    }
}

impl DisplayLegend {
    pub fn display(&self, state: SeatState) -> SeatDisplay {
        match state {
            SeatState::OccupiedByPerson => self.occupied_by_person,
            SeatState::SuspectedOccupancy => self.suspected_occupancy,
            SeatState::Free => self.free,
            SeatState::OutOfService => self.out_of_service,
        }
    }
}

pub fn state_to_display(state: SeatState) -> SeatDisplay {
    DisplayLegend::default().display(state)
}

/// Copy of `frame` with each seat tinted by its state colour and outlined.
pub fn annotate(frame: &RasterImage, layout: &SeatLayout, report: &FrameReport, legend: &DisplayLegend) -> RasterImage {
    const BORDER: u32 = 2;
    let mut out = frame.clone();
    for obs in &report.observations {
        let Some(region) = layout.region(obs.seat_id) else { continue };
        let b = region.pixel_bounds(frame.width(), frame.height());
        let color = legend.display(obs.state).color.rgb();
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                let edge = x < b.x + BORDER || y < b.y + BORDER || x + BORDER >= b.x + b.w || y + BORDER >= b.y + b.h;
                let px = if edge {
                    color
                } else {
                    let p = out.get(x, y);
                    std::array::from_fn(|i| ((p[i] as u32 * 3 + color[i] as u32 * 2) / 5) as u8)
                };
                out.put(x, y, px);
            }
        }
    }
    out
}
