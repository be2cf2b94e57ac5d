//! Library seat-occupancy detection.
//!
//! A frame goes through a serial two-channel decision procedure:
//!
//! 1. **Preprocess** – HSV conversion and global equalization of the V channel
//!    ([`imaging`]).
//! 2. **Person channel** – a [`detect::DetectorBackend`] runs on the full frame;
//!    person boxes are assigned to seats by centre containment ([`seatgrid`]).
//! 3. **Object channel** – only seats with no person are cropped and handed to a
//!    [`detect::ClassifierBackend`]; "objects" on an empty seat means the seat is
//!    suspected of being held ([`pipeline`]).
//!
//! [`metrics`] holds the evaluation arithmetic (accuracy, MAE, PR curves, AP) and
//! [`scenegen`] a procedural renderer that produces labelled top-view scenes and
//! the ground truth the oracle backends answer from.

pub mod detect;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod scenegen;
pub mod seatgrid;

pub use detect::{
    BoundingBox, ClassifierBackend, ClassLabel, ClassificationResult, Detection, DetectorBackend,
    ObjectLabel,
};
pub use error::{Error, Result};
pub use imaging::{HsvImage, RasterImage};
pub use metrics::{ConfusionCounts, EvaluationReport, PrPoint};
pub use pipeline::{FrameReport, PipelineConfig, SeatObservation, SeatState};
pub use scenegen::{GroundTruth, SceneSpec};
pub use seatgrid::{SeatLayout, SeatRegion, SubImage};
