//! Request and response payloads.

use std::path::PathBuf;

use seatwatch_core::detect::oracle::{ClassifierNoise, DetectorNoise};
use seatwatch_core::pipeline::{DisplayColor, Glyph, PipelineConfig, SeatState};
use seatwatch_core::seatgrid::{SeatLayout, SeatRegion};
use serde::{Deserialize, Serialize};

/// How a room's frames are analysed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Answers from the scene description sent with (or embedded in) each
    /// frame.
    Oracle {
        #[serde(default)]
        detector_noise: DetectorNoise,
        #[serde(default)]
        classifier_noise: ClassifierNoise,
    },
    /// ONNX models with sidecar configs.
    Model {
        detector: PathBuf,
        classifier: PathBuf,
        #[serde(default)]
        conf_thresh: Option<f64>,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Oracle { detector_noise: DetectorNoise::default(), classifier_noise: ClassifierNoise::default() }
    }
}

/// A room as stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub room_id: String,
    pub layout: SeatLayout,
    pub config: PipelineConfig,
    pub backend: BackendSpec,
}

#[derive(Clone, Debug, Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
}

#[derive(Clone, Debug, Deserialize)]
pub struct LayoutBody {
    pub regions: Vec<SeatRegion>,
}

/// `POST /rooms` body. Exactly one of `layout` and `grid` must be given.
#[derive(Clone, Debug, Deserialize)]
pub struct CreateRoom {
    pub room_id: String,
    #[serde(default)]
    pub layout: Option<LayoutBody>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
    #[serde(default)]
    pub backend: Option<BackendSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoomView {
    pub room_id: String,
    pub layout: SeatLayout,
    pub config: PipelineConfig,
    pub backend: BackendSpec,
    pub detector: String,
    pub classifier: String,
    pub frames_processed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeatView {
    pub seat_id: u32,
    pub state: SeatState,
    pub color: DisplayColor,
    pub glyph: Glyph,
    /// Null until the seat has been observed.
    pub last_updated: Option<f64>,
    pub frame_id: Option<String>,
    pub person_confidence: Option<f64>,
    pub objects_confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Announcement {
    pub id: i64,
    pub title: String,
    pub body: String,
    pub created_at: f64,
}

#[derive(Clone, Debug, Deserialize)]
pub struct NewAnnouncement {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub body: String,
}

/// A seat moved into suspected occupancy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub room_id: String,
    pub seat_id: u32,
    pub from: SeatState,
    pub to: SeatState,
    pub frame_id: String,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunState {
    #[default]
    Idle,
    InProgress,
    Completed,
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub status: RunState,
    pub frame_id: Option<String>,
    pub updated_at: Option<f64>,
    pub error: Option<String>,
    /// Frames waiting behind the one in progress.
    pub queued: usize,
}
